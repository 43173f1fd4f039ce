use std::fs;
use std::path::Path;

use vtada_core::data::pnm::{read_pnm, write_pnm, PnmImage};
use vtada_core::data::synthetic::{rasterize_bar, rotate_bilinear, Bar};
use vtada_core::data::{load_image_dir, load_manifest, write_image_dir, Domain, DomainDataset};
use vtada_core::{Error, Tensor};

fn bar(angle: f64, half_thickness: f64) -> Bar {
    Bar {
        angle,
        center_x: 8.0,
        center_y: 8.0,
        half_length: 4.0,
        half_thickness,
    }
}

#[test]
fn horizontal_bar_pixels_by_hand() {
    // Pixel centres sit at (c + 0.5, r + 0.5). With half-thickness 0.75 the
    // two rows straddling y = 8 are 0.5 from the axis, so they read
    // 0.75 + 0.5 - 0.5; the next rows out are 1.5 away and read 0.
    // Columns 4..=11 are within 3.5 of x = 8 along the bar and read fully.
    let img = rasterize_bar(&bar(0.0, 0.75), 16);
    for r in 0..16 {
        for c in 0..16 {
            let want = if (r == 7 || r == 8) && (4..=11).contains(&c) {
                0.75
            } else {
                0.0
            };
            assert!((img[r * 16 + c] - want).abs() < 1e-12, "({r},{c}) {}", img[r * 16 + c]);
        }
    }
}

#[test]
fn vertical_bar_is_the_transpose() {
    let h = rasterize_bar(&bar(0.0, 1.0), 16);
    let v = rasterize_bar(&bar(std::f64::consts::FRAC_PI_2, 1.0), 16);
    for r in 0..16 {
        for c in 0..16 {
            assert!((v[r * 16 + c] - h[c * 16 + r]).abs() < 1e-12);
        }
    }
}

#[test]
fn quarter_turn_is_counter_clockwise_permutation() {
    let n = 7;
    let data: Vec<f64> = (0..n * n * 2).map(|i| (i as f64 * 0.37).sin()).collect();
    let img = Tensor::new(&[n, n, 2], data.clone()).unwrap();
    let out = rotate_bilinear(&img, 90.0).unwrap();
    for r in 0..n {
        for c in 0..n {
            for ch in 0..2 {
                let want = data[(c * n + (n - 1 - r)) * 2 + ch];
                assert!((out.data()[(r * n + c) * 2 + ch] - want).abs() < 1e-12);
            }
        }
    }
    let back = rotate_bilinear(&out, -90.0).unwrap();
    for (a, b) in back.data().iter().zip(&data) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn gray(w: usize, h: usize, fill: u8) -> PnmImage {
    PnmImage {
        width: w,
        height: h,
        channels: 1,
        maxval: 255,
        samples: (0..w * h).map(|i| fill.wrapping_add(i as u8)).collect(),
    }
}

fn put(path: &Path, img: &PnmImage) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_pnm(path, img).unwrap();
}

#[test]
fn class_directories_load_in_name_order() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    put(&root.join("b_cats/x.pgm"), &gray(3, 2, 10));
    put(&root.join("a_dogs/y.pgm"), &gray(3, 2, 20));
    put(&root.join("a_dogs/z.pgm"), &gray(3, 2, 30));
    fs::write(root.join("a_dogs/.hidden"), b"junk").unwrap();
    let ds = load_image_dir(root).unwrap();
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.num_classes, 2);
    assert_eq!(ds.labels.as_deref(), Some(&[0, 0, 1][..]));
    assert_eq!(ds.images[0].shape(), &[2, 3, 1]);
    assert_eq!(ds.images[0].data()[0], 20.0 / 255.0);
    assert_eq!(ds.images[2].data()[1], 11.0 / 255.0);
}

#[test]
fn flat_directory_is_unlabeled_target() {
    let dir = tempfile::tempdir().unwrap();
    put(&dir.path().join("1.pgm"), &gray(4, 4, 0));
    put(&dir.path().join("2.pgm"), &gray(4, 4, 1));
    let ds = load_image_dir(dir.path()).unwrap();
    assert_eq!(ds.len(), 2);
    assert!(ds.labels.is_none());
    assert_eq!(ds.domain, Domain::Target);
}

#[test]
fn manifest_paths_are_relative_to_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    put(&dir.path().join("imgs/a.pgm"), &gray(2, 2, 5));
    put(&dir.path().join("imgs/b.pgm"), &gray(2, 2, 6));
    let m = dir.path().join("list.tsv");
    fs::write(&m, "imgs/a.pgm\t2\n\nimgs/b.pgm\t0\n").unwrap();
    let ds = load_manifest(&m).unwrap();
    assert_eq!(ds.labels.as_deref(), Some(&[2, 0][..]));
    assert_eq!(ds.num_classes, 3);

    fs::write(&m, "imgs/a.pgm 2\n").unwrap();
    assert!(matches!(load_manifest(&m), Err(Error::Format { .. })));
}

#[test]
fn mixed_resolutions_are_rejected_with_the_offender() {
    let dir = tempfile::tempdir().unwrap();
    put(&dir.path().join("c0/a.pgm"), &gray(4, 4, 0));
    put(&dir.path().join("c0/b.pgm"), &gray(5, 4, 0));
    match load_image_dir(dir.path()) {
        Err(Error::Data(msg)) => assert!(msg.contains("b.pgm"), "{msg}"),
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn netpbm_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let p6 = PnmImage {
        width: 3,
        height: 2,
        channels: 3,
        maxval: 255,
        samples: (0..18).map(|i| (i * 14) as u8).collect(),
    };
    for (name, img) in [("a.pgm", gray(5, 3, 250)), ("b.ppm", p6)] {
        let path = dir.path().join(name);
        write_pnm(&path, &img).unwrap();
        let back = read_pnm(&path).unwrap();
        assert_eq!(back, img);
        assert_eq!(fs::read(&path).unwrap(), back.encode());
        assert_eq!(PnmImage::from_tensor(&back.to_tensor()).unwrap(), img);
    }
}

#[test]
fn written_datasets_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let images = (0..4)
        .map(|i| {
            Tensor::new(
                &[2, 2, 3],
                (0..12).map(|k| ((i * 12 + k) % 256) as f64 / 255.0).collect(),
            )
            .unwrap()
        })
        .collect();
    let ds = DomainDataset::new(images, Some(vec![1, 0, 1, 2]), Domain::Source, 3).unwrap();
    write_image_dir(&ds, dir.path()).unwrap();
    for back in [
        load_image_dir(dir.path()).unwrap(),
        load_manifest(&dir.path().join("manifest.tsv")).unwrap(),
    ] {
        let mut pairs: Vec<(usize, Vec<f64>)> = back
            .labels
            .clone()
            .unwrap()
            .into_iter()
            .zip(back.images.iter().map(|t| t.data().to_vec()))
            .collect();
        let mut want: Vec<(usize, Vec<f64>)> = ds
            .labels
            .clone()
            .unwrap()
            .into_iter()
            .zip(ds.images.iter().map(|t| t.data().to_vec()))
            .collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(pairs, want);
    }
}
