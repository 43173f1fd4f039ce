//! Source / target datasets, on-disk ingestion and paired mini-batching.

pub mod pnm;
pub mod synthetic;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use pnm::{read_pnm, write_pnm, PnmImage};
pub use synthetic::{apply_shift, gen_oriented_bars, rasterize_bar, rotate_bilinear, Bar, ShiftSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct DomainDataset {
    /// `[H×W×C]` images with pixels in `[0, 1]`.
    pub images: Vec<Tensor>,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    pub num_classes: usize,
}

impl DomainDataset {
    pub fn new(images: Vec<Tensor>, labels: Option<Vec<usize>>, domain: Domain, num_classes: usize) -> Result<Self> {
        let ds = Self {
            images,
            labels,
            domain,
            num_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.labels {
            Some(labels) => {
                if labels.len() != self.images.len() {
                    return Err(Error::Data(format!(
                        "{} labels for {} images",
                        labels.len(),
                        self.images.len()
                    )));
                }
                if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= self.num_classes) {
                    return Err(Error::Label {
                        index,
                        label,
                        classes: self.num_classes,
                    });
                }
            }
            None if self.domain == Domain::Source => {
                return Err(Error::Data("an unlabeled dataset must be tagged target".into()));
            }
            None => {}
        }
        if let Some(first) = self.images.first() {
            if let Some(bad) = self.images.iter().position(|t| t.shape() != first.shape()) {
                return Err(Error::Data(format!(
                    "image {bad} has shape {:?}, expected {:?}",
                    self.images[bad].shape(),
                    first.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    pub fn image_shape(&self) -> Option<&[usize]> {
        self.images.first().map(Tensor::shape)
    }

    /// Same images tagged as target with labels removed.
    pub fn unlabeled_target(&self) -> Self {
        Self {
            images: self.images.clone(),
            labels: None,
            domain: Domain::Target,
            num_classes: self.num_classes,
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.retain(|p| {
        !p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with('.'))
    });
    out.sort();
    Ok(out)
}

fn load_files(paths: &[PathBuf]) -> Result<Vec<Tensor>> {
    let images: Vec<(PathBuf, Tensor)> = paths
        .iter()
        .map(|p| read_pnm(p).map(|img| (p.clone(), img.to_tensor())))
        .collect::<Result<_>>()?;
    let Some((_, first)) = images.first() else {
        return Ok(Vec::new());
    };
    let shape = first.shape().to_vec();
    let offenders: Vec<String> = images
        .iter()
        .filter(|(_, t)| t.shape() != shape.as_slice())
        .map(|(p, t)| format!("{} {:?}", p.display(), t.shape()))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::Data(format!(
            "mixed image resolutions (expected {shape:?}): {}",
            offenders.join(", ")
        )));
    }
    Ok(images.into_iter().map(|(_, t)| t).collect())
}

/// Loads a class-per-subdirectory tree of P5/P6 files. Class index is the
/// lexicographic rank of the subdirectory name. A directory holding only
/// files (no subdirectories) loads as an unlabeled target set.
pub fn load_image_dir(root: &Path) -> Result<DomainDataset> {
    if !root.is_dir() {
        return Err(Error::Data(format!("{} is not a directory", root.display())));
    }
    let entries = sorted_entries(root)?;
    let class_dirs: Vec<&PathBuf> = entries.iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        let files: Vec<PathBuf> = entries.into_iter().filter(|p| p.is_file()).collect();
        if files.is_empty() {
            log::warn!("{} contains no images", root.display());
        }
        return DomainDataset::new(load_files(&files)?, None, Domain::Target, 0);
    }
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file()) {
            paths.push(file);
            labels.push(class);
        }
    }
    if paths.is_empty() {
        log::warn!("{} contains no images", root.display());
    }
    DomainDataset::new(load_files(&paths)?, Some(labels), Domain::Source, class_dirs.len())
}

/// Loads `relative_path<TAB>label` lines, paths relative to the manifest.
pub fn load_manifest(manifest: &Path) -> Result<DomainDataset> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut paths = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (rel, label) = line.split_once('\t').ok_or_else(|| Error::Format {
            path: manifest.to_path_buf(),
            detail: format!("line {}: expected <path>\\t<label>", lineno + 1),
        })?;
        let label: usize = label.trim().parse().map_err(|_| Error::Format {
            path: manifest.to_path_buf(),
            detail: format!("line {}: bad label '{label}'", lineno + 1),
        })?;
        paths.push(base.join(rel));
        labels.push(label);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    DomainDataset::new(load_files(&paths)?, Some(labels), Domain::Source, classes)
}

/// Writes a labeled dataset as `<root>/class_XX/NNNNN.{pgm,ppm}` plus a
/// `manifest.tsv`.
pub fn write_image_dir(ds: &DomainDataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut manifest = String::new();
    for (i, img) in ds.images.iter().enumerate() {
        let pnm = PnmImage::from_tensor(img)?;
        let ext = if pnm.channels == 1 { "pgm" } else { "ppm" };
        let (rel, label) = match &ds.labels {
            Some(l) => (format!("class_{:02}/{i:05}.{ext}", l[i]), Some(l[i])),
            None => (format!("{i:05}.{ext}"), None),
        };
        let path = root.join(&rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_pnm(&path, &pnm)?;
        if let Some(label) = label {
            manifest.push_str(&format!("{rel}\t{label}\n"));
        }
    }
    if ds.labels.is_some() {
        let path = root.join("manifest.tsv");
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Paired source / target mini-batch.
#[derive(Debug, Clone)]
pub struct DomainBatch {
    pub src_images: Vec<Tensor>,
    pub src_labels: Vec<usize>,
    pub tgt_images: Vec<Tensor>,
    pub src_indices: Vec<usize>,
    pub tgt_indices: Vec<usize>,
}

impl DomainBatch {
    pub fn n_s(&self) -> usize {
        self.src_images.len()
    }

    pub fn n_t(&self) -> usize {
        self.tgt_images.len()
    }
}

/// Index plan for one epoch: `ceil(max(n_s, n_t)/batch)` batches. Both
/// domains are shuffled from `(seed, epoch)`; the shorter index stream
/// cycles, the longer is consumed exactly once (its final batch may be
/// short, and the paired batch matches its size).
pub fn batch_plan(
    n_s: usize,
    n_t: usize,
    batch: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if n_s == 0 || n_t == 0 {
        return Err(Error::Data(format!("cannot batch empty domain (n_s={n_s}, n_t={n_t})")));
    }
    if batch == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut perm_s: Vec<usize> = (0..n_s).collect();
    perm_s.shuffle(&mut rng);
    let mut perm_t: Vec<usize> = (0..n_t).collect();
    perm_t.shuffle(&mut rng);

    let longest = n_s.max(n_t);
    let batches = longest.div_ceil(batch);
    Ok((0..batches)
        .map(|b| {
            let start = b * batch;
            let len = batch.min(longest - start);
            let s = (start..start + len).map(|i| perm_s[i % n_s]).collect();
            let t = (start..start + len).map(|i| perm_t[i % n_t]).collect();
            (s, t)
        })
        .collect())
}

pub fn make_batches(
    src: &DomainDataset,
    tgt: &DomainDataset,
    batch: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<DomainBatch>> {
    let labels = src
        .labels
        .as_ref()
        .ok_or_else(|| Error::Data("source dataset must be labeled".into()))?;
    if tgt.is_labeled() {
        return Err(Error::Data("target dataset must be unlabeled during adaptation".into()));
    }
    Ok(batch_plan(src.len(), tgt.len(), batch, seed, epoch)?
        .into_iter()
        .map(|(s, t)| DomainBatch {
            src_images: s.iter().map(|&i| src.images[i].clone()).collect(),
            src_labels: s.iter().map(|&i| labels[i]).collect(),
            tgt_images: t.iter().map(|&i| tgt.images[i].clone()).collect(),
            src_indices: s,
            tgt_indices: t,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(n: usize, labeled: bool) -> DomainDataset {
        let images = (0..n)
            .map(|i| Tensor::new(&[1, 1, 1], vec![i as f64]).unwrap())
            .collect();
        if labeled {
            DomainDataset::new(images, Some(vec![0; n]), Domain::Source, 2).unwrap()
        } else {
            DomainDataset::new(images, None, Domain::Target, 2).unwrap()
        }
    }

    #[test]
    fn equal_domains_two_batches() {
        let b = make_batches(&dummy(4, true), &dummy(4, false), 2, 1, 0).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|x| x.n_s() == 2 && x.n_t() == 2));
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let a = batch_plan(10, 7, 3, 5, 2).unwrap();
        assert_eq!(a, batch_plan(10, 7, 3, 5, 2).unwrap());
        assert_ne!(a, batch_plan(10, 7, 3, 5, 3).unwrap());
    }

    #[test]
    fn longer_domain_covered_once() {
        for (n_s, n_t, batch) in [(3, 6, 3), (10, 7, 4), (5, 5, 2), (1, 9, 4)] {
            let plan = batch_plan(n_s, n_t, batch, 11, 0).unwrap();
            let mut longer: Vec<usize> = plan
                .iter()
                .flat_map(|(s, t)| if n_s >= n_t { s.clone() } else { t.clone() })
                .collect();
            longer.sort_unstable();
            assert_eq!(longer, (0..n_s.max(n_t)).collect::<Vec<_>>());
            assert!(plan.iter().all(|(s, t)| s.len() == t.len()));
        }
    }

    #[test]
    fn batching_rejects_bad_inputs() {
        assert!(make_batches(&dummy(0, true), &dummy(3, false), 2, 0, 0).is_err());
        assert!(make_batches(&dummy(3, true), &dummy(3, false), 0, 0, 0).is_err());
        assert!(make_batches(&dummy(3, true), &dummy(3, true), 2, 0, 0).is_err());
    }

    #[test]
    fn unlabeled_source_is_invalid() {
        let images = vec![Tensor::zeros(&[1, 1, 1])];
        assert!(DomainDataset::new(images, None, Domain::Source, 2).is_err());
    }

    #[test]
    fn out_of_range_label_is_invalid() {
        let images = vec![Tensor::zeros(&[1, 1, 1])];
        assert!(matches!(
            DomainDataset::new(images, Some(vec![3]), Domain::Source, 2),
            Err(Error::Label { .. })
        ));
    }
}
