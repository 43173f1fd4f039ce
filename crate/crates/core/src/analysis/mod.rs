//! Feature export, 2-D projections (PCA, exact t-SNE) and SVG plots.

pub mod pca;
pub mod svg;
pub mod tsne;

use std::fs;
use std::path::{Path, PathBuf};

use crate::adversarial::AdversarialModel;
use crate::data::{Domain, DomainDataset};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub use pca::{jacobi_eigen, pca_project};
pub use svg::{convergence_report, convergence_svg, scatter_svg, scatter_svg_string};
pub use tsne::{joint_probabilities, kl_divergence, tsne_project, Affinities, TsneParams};

/// Extractor outputs with their domain and, when known, class.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    /// `[n×m]`
    pub vectors: Tensor,
    pub domains: Vec<Domain>,
    pub labels: Vec<Option<usize>>,
}

impl EmbeddingSet {
    pub fn new(vectors: Tensor, domains: Vec<Domain>, labels: Vec<Option<usize>>) -> Result<Self> {
        let (n, _) = vectors.dims2("EmbeddingSet")?;
        if domains.len() != n || labels.len() != n {
            return Err(Error::Contract(format!(
                "{n} vectors but {} domain tags and {} labels",
                domains.len(),
                labels.len()
            )));
        }
        Ok(Self {
            vectors,
            domains,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.domains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domains.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.dim();
        &self.vectors.data()[i * m..(i + 1) * m]
    }
}

const EXPORT_CHUNK: usize = 64;

/// Runs F over every image of every dataset, in order.
pub fn export_embeddings(model: &AdversarialModel, datasets: &[&DomainDataset]) -> Result<EmbeddingSet> {
    let frozen = model.frozen();
    let mut data = Vec::new();
    let mut domains = Vec::new();
    let mut labels = Vec::new();
    for ds in datasets {
        for (c, chunk) in ds.images.chunks(EXPORT_CHUNK).enumerate() {
            let f = frozen.features(chunk)?;
            data.extend_from_slice(f.data());
            for i in 0..chunk.len() {
                domains.push(ds.domain);
                labels.push(ds.labels.as_ref().map(|l| l[c * EXPORT_CHUNK + i]));
            }
        }
    }
    let m = model.config.vit.feature_dim;
    let n = domains.len();
    EmbeddingSet::new(Tensor::new(&[n, m], data)?, domains, labels)
}

/// `emb.vtat` → `emb.tags.csv`.
pub fn tags_path(path: &Path) -> PathBuf {
    path.with_extension("tags.csv")
}

fn parse_domain(s: &str) -> Option<Domain> {
    match s {
        "source" => Some(Domain::Source),
        "target" => Some(Domain::Target),
        _ => None,
    }
}

fn label_field(l: Option<usize>) -> String {
    l.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the vectors as a `VTAT` tensor and the tags next to it.
pub fn write_embeddings(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    write_tensor(&mut bytes, &set.vectors).expect("write to Vec");
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mut tags = String::from("index,domain,label\n");
    for (i, (d, l)) in set.domains.iter().zip(&set.labels).enumerate() {
        tags.push_str(&format!("{i},{d},{}\n", label_field(*l)));
    }
    let tp = tags_path(path);
    fs::write(&tp, tags).map_err(|e| Error::io(&tp, e))
}

fn parse_tag_rows(text: &str, path: &Path, header: &str, cols: usize) -> Result<Vec<Vec<String>>> {
    let fmt = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(header) {
        return Err(fmt(format!("line 1: expected header '{header}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
        if fields.len() != cols {
            return Err(fmt(format!(
                "line {}: expected {cols} columns, found {}",
                i + 2,
                fields.len()
            )));
        }
        if fields[0] != rows.len().to_string() {
            return Err(fmt(format!("line {}: index {} out of sequence", i + 2, fields[0])));
        }
        rows.push(fields);
    }
    Ok(rows)
}

fn parse_tags(fields: &[String], line: usize, path: &Path) -> Result<(Domain, Option<usize>)> {
    let fmt = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };
    let domain = parse_domain(&fields[0]).ok_or_else(|| fmt(format!("unknown domain '{}'", fields[0])))?;
    let label = if fields[1].is_empty() {
        None
    } else {
        Some(
            fields[1]
                .parse()
                .map_err(|_| fmt(format!("bad label '{}'", fields[1])))?,
        )
    };
    Ok((domain, label))
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let vectors = read_tensor(&mut bytes.as_slice())?;
    let tp = tags_path(path);
    let text = fs::read_to_string(&tp).map_err(|e| Error::io(&tp, e))?;
    let rows = parse_tag_rows(&text, &tp, "index,domain,label", 3)?;
    let mut domains = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let (d, l) = parse_tags(&r[1..], i + 2, &tp)?;
        domains.push(d);
        labels.push(l);
    }
    if vectors.rank() != 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("embedding tensor must be 2-D, got {:?}", vectors.shape()),
        });
    }
    EmbeddingSet::new(vectors, domains, labels)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProjectionMethod {
    /// Variances along the two kept axes and the total variance.
    Pca { eigenvalues: [f64; 2], total_variance: f64 },
    /// `kl_trace[t]` is the KL divergence (against the unexaggerated P)
    /// after iteration `t`.
    Tsne { params: TsneParams, kl_trace: Vec<f64> },
}

impl ProjectionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionMethod::Pca { .. } => "pca",
            ProjectionMethod::Tsne { .. } => "tsne",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Projection2D {
    /// `[n×2]`
    pub points: Tensor,
    pub method: ProjectionMethod,
}

impl Projection2D {
    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn xy(&self, i: usize) -> (f64, f64) {
        (self.points.data()[2 * i], self.points.data()[2 * i + 1])
    }
}

/// `index,x,y,domain,label` with shortest round-trip floats.
pub fn write_projection_csv(
    proj: &Projection2D,
    domains: &[Domain],
    labels: &[Option<usize>],
    path: &Path,
) -> Result<()> {
    if domains.len() != proj.len() || labels.len() != proj.len() {
        return Err(Error::Contract(format!(
            "{} points but {} tags",
            proj.len(),
            domains.len()
        )));
    }
    let mut text = String::from("index,x,y,domain,label\n");
    for i in 0..proj.len() {
        let (x, y) = proj.xy(i);
        text.push_str(&format!("{i},{x:?},{y:?},{},{}\n", domains[i], label_field(labels[i])));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Points with their tags, as read back from a projection CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionTable {
    pub points: Vec<(f64, f64)>,
    pub domains: Vec<Domain>,
    pub labels: Vec<Option<usize>>,
}

pub fn read_projection_csv(path: &Path) -> Result<ProjectionTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = parse_tag_rows(&text, path, "index,x,y,domain,label", 5)?;
    let mut table = ProjectionTable {
        points: Vec::new(),
        domains: Vec::new(),
        labels: Vec::new(),
    };
    for (i, r) in rows.iter().enumerate() {
        let coord = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: bad coordinate '{s}'", i + 2),
            })
        };
        table.points.push((coord(&r[1])?, coord(&r[2])?));
        let (d, l) = parse_tags(&r[3..], i + 2, path)?;
        table.domains.push(d);
        table.labels.push(l);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.vtat");
        let set = EmbeddingSet::new(
            Tensor::new(&[3, 2], vec![0.1, 0.2, 0.3, 0.4, 0.5, 1.0 / 3.0]).unwrap(),
            vec![Domain::Source, Domain::Target, Domain::Target],
            vec![Some(1), None, Some(0)],
        )
        .unwrap();
        write_embeddings(&set, &path).unwrap();
        assert!(dir.path().join("emb.tags.csv").exists());
        let back = read_embeddings(&path).unwrap();
        assert_eq!(back.vectors.data(), set.vectors.data());
        assert_eq!(back.domains, set.domains);
        assert_eq!(back.labels, set.labels);
    }

    #[test]
    fn tag_count_must_match() {
        let v = Tensor::zeros(&[2, 2]);
        assert!(EmbeddingSet::new(v, vec![Domain::Source], vec![None, None]).is_err());
    }

    #[test]
    fn projection_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let proj = Projection2D {
            points: Tensor::new(&[2, 2], vec![0.1, -2.5, 1e-300, 7.0]).unwrap(),
            method: ProjectionMethod::Pca {
                eigenvalues: [1.0, 0.5],
                total_variance: 1.5,
            },
        };
        write_projection_csv(&proj, &[Domain::Source, Domain::Target], &[Some(2), None], &path).unwrap();
        let t = read_projection_csv(&path).unwrap();
        assert_eq!(t.points, vec![(0.1, -2.5), (1e-300, 7.0)]);
        assert_eq!(t.labels, vec![Some(2), None]);
        std::fs::write(&path, "index,x,y,domain,label\n0,1,2,moon,\n").unwrap();
        let err = read_projection_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }
}
