//! On-disk corpora: `NNNNN.pgm` + `NNNNN.graph.json` pairs listed in
//! `manifest.json`, with the class space in a separate ontology file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EntityClassSpace, GraphError, RadiologyGraph};
use crate::image::{ImageError, ImageGrid};
use crate::synth::{generate, sample_seed, synth_ontology};
use crate::train::Sample;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ONTOLOGY_FILE: &str = "ontology.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Graph {
        path: PathBuf,
        #[source]
        source: GraphError,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairEntry {
    pub image: String,
    pub graph: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    /// Class space file, relative to the dataset directory.
    pub ontology: String,
    pub seed: Option<u64>,
    pub pairs: Vec<PairEntry>,
}

/// Loaded corpus; `names` are the image file stems in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: EntityClassSpace,
    pub names: Vec<String>,
    pub samples: Vec<Sample>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn stem(index: usize) -> String {
    format!("{index:05}")
}

/// Writes `count` synthetic pairs generated from `seed`.
pub fn write_synth_dataset(dir: &Path, count: usize, seed: u64, noise_sigma: f64) -> Result<Manifest, DatasetError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let classes = synth_ontology();
    let ontology_path = dir.join(ONTOLOGY_FILE);
    fs::write(&ontology_path, classes.to_json() + "\n").map_err(io(&ontology_path))?;
    let mut pairs = Vec::with_capacity(count);
    for i in 0..count {
        let (_, image, graph) = generate(sample_seed(seed, i as u64), noise_sigma);
        let entry = PairEntry {
            image: format!("{}.pgm", stem(i)),
            graph: format!("{}.graph.json", stem(i)),
        };
        let image_path = dir.join(&entry.image);
        image.write_pgm(&image_path).map_err(|source| DatasetError::Image {
            path: image_path.clone(),
            source,
        })?;
        let graph_path = dir.join(&entry.graph);
        fs::write(&graph_path, graph.to_json(&classes) + "\n").map_err(io(&graph_path))?;
        pairs.push(entry);
    }
    let manifest = Manifest {
        ontology: ONTOLOGY_FILE.into(),
        seed: Some(seed),
        pairs,
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io(&manifest_path))?;
    Ok(manifest)
}

/// Synthetic samples held in memory, identical to what
/// [`write_synth_dataset`] writes and [`load_dataset`] reads back.
pub fn synth_samples(count: usize, seed: u64, noise_sigma: f64) -> Vec<Sample> {
    (0..count)
        .map(|i| {
            let (_, image, graph) = generate(sample_seed(seed, i as u64), noise_sigma);
            Sample { image, graph }
        })
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io(&path))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
        path,
        message: e.to_string(),
    })
}

pub fn load_graph(path: &Path, classes: &EntityClassSpace) -> Result<RadiologyGraph, DatasetError> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    RadiologyGraph::from_json(&text, classes).map_err(|source| DatasetError::Graph {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, DatasetError> {
    let manifest = read_manifest(dir)?;
    let ontology_path = dir.join(&manifest.ontology);
    let classes = EntityClassSpace::load(&ontology_path).map_err(|source| DatasetError::Graph {
        path: ontology_path.clone(),
        source,
    })?;
    let mut names = Vec::with_capacity(manifest.pairs.len());
    let mut samples = Vec::with_capacity(manifest.pairs.len());
    for entry in &manifest.pairs {
        let image_path = dir.join(&entry.image);
        let image = ImageGrid::read_pgm(&image_path).map_err(|source| DatasetError::Image {
            path: image_path.clone(),
            source,
        })?;
        let graph = load_graph(&dir.join(&entry.graph), &classes)?;
        let name = Path::new(&entry.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| entry.image.clone());
        names.push(name);
        samples.push(Sample { image, graph });
    }
    Ok(Dataset {
        classes,
        names,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::DEFAULT_NOISE_SIGMA;

    #[test]
    fn written_corpus_loads_back_identically() {
        let dir = tempfile::tempdir().unwrap();
        write_synth_dataset(dir.path(), 5, 11, DEFAULT_NOISE_SIGMA).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.names, vec!["00000", "00001", "00002", "00003", "00004"]);
        assert_eq!(ds.samples, synth_samples(5, 11, DEFAULT_NOISE_SIGMA));
        assert_eq!(ds.classes, synth_ontology());
    }

    #[test]
    fn empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_synth_dataset(dir.path(), 0, 1, DEFAULT_NOISE_SIGMA).unwrap();
        assert!(m.pairs.is_empty());
        assert!(load_dataset(dir.path()).unwrap().samples.is_empty());
    }
}
