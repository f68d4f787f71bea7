//! On-disk layouts: container files, datasets and checkpoints.
//!
//! A dataset directory holds `manifest.csv` (`sample_id,domain_id,path`,
//! paths relative to the directory) and one container per sample under
//! `samples/`.

use std::fs;
use std::path::{Path, PathBuf};

use adverin_core::container::{self, NamedTensor};
use adverin_core::region::RegionLabels;
use adverin_core::segnet::{ParamSet, SegNet};
use adverin_core::{Image2D, MaskChannels, Sample};
use anyhow::{bail, Context, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const SAMPLES_DIR: &str = "samples";

pub fn read_container(path: &Path) -> Result<Vec<NamedTensor>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    container::decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn write_container(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = container::encode(tensors).with_context(|| format!("encoding {}", path.display()))?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub domain_id: u32,
    pub path: String,
}

pub fn sample_tensors(sample: &Sample) -> Vec<NamedTensor> {
    let img = &sample.image;
    let (h, w) = (img.height(), img.width());
    let t = &sample.truth;
    let mut out = vec![
        NamedTensor::new("image", vec![h, w], img.data().to_vec()),
        NamedTensor::new(
            "truth",
            vec![t.channels(), h, w],
            t.data().iter().map(|&v| v as f64).collect(),
        ),
        NamedTensor::new("meta.vrange", vec![2], vec![img.vmin(), img.vmax()]),
    ];
    if let Some(l) = &sample.region_labels {
        out.push(NamedTensor::new(
            "region_labels",
            vec![h, w],
            l.labels().iter().map(|&v| v as f64).collect(),
        ));
        out.push(NamedTensor::scalar("meta.regions", l.k() as f64));
    }
    out
}

pub fn sample_from_tensors(tensors: &[NamedTensor], sample_id: &str, domain_id: u32) -> Result<Sample> {
    let image = container::find(tensors, "image")?;
    let truth = container::find(tensors, "truth")?;
    let vrange = container::find(tensors, "meta.vrange")?;
    if image.dims.len() != 2 || truth.dims.len() != 3 || vrange.values.len() != 2 {
        bail!("sample {sample_id}: unexpected tensor dims");
    }
    let (h, w) = (image.dims[0], image.dims[1]);
    let image = Image2D::new(h, w, image.values.clone(), vrange.values[0], vrange.values[1])?;
    let truth = MaskChannels::from_reals(truth.dims[0], truth.dims[1], truth.dims[2], &truth.values)?;
    let mut sample = Sample::new(image, truth, domain_id, sample_id.to_string())?;
    if let Ok(labels) = container::find(tensors, "region_labels") {
        let k = match container::find(tensors, "meta.regions") {
            Ok(t) => t.values[0] as usize,
            Err(_) => labels.values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize + 1,
        };
        let values = labels.values.iter().map(|&v| v as u32).collect();
        sample = sample.with_region_labels(RegionLabels::new(h, w, k, values)?)?;
    }
    Ok(sample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Sorted distinct domain ids.
    pub fn domains(&self) -> Vec<u32> {
        let mut d: Vec<u32> = self.samples.iter().map(|s| s.domain_id).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    pub fn sample(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == id)
    }
}

pub fn sample_path(id: &str) -> String {
    format!("{SAMPLES_DIR}/{id}.adin")
}

pub fn write_manifest(root: &Path, entries: &[ManifestEntry]) -> Result<PathBuf> {
    let path = root.join(MANIFEST);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["sample_id", "domain_id", "path"])?;
    for e in entries {
        w.write_record([e.sample_id.as_str(), &e.domain_id.to_string(), e.path.as_str()])?;
    }
    w.flush()?;
    Ok(path)
}

pub fn read_manifest(root: &Path) -> Result<Vec<ManifestEntry>> {
    let path = root.join(MANIFEST);
    let mut r = csv::Reader::from_path(&path).with_context(|| format!("reading {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "domain_id", "path"] {
        bail!("{}: expected header sample_id,domain_id,path", path.display());
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let domain_id = rec[1]
            .parse()
            .with_context(|| format!("{} row {}: bad domain id {:?}", path.display(), i + 1, &rec[1]))?;
        out.push(ManifestEntry { sample_id: rec[0].to_string(), domain_id, path: rec[2].to_string() });
    }
    Ok(out)
}

/// Writes every sample container and the manifest.
pub fn write_dataset(root: &Path, samples: &[Sample]) -> Result<PathBuf> {
    fs::create_dir_all(root.join(SAMPLES_DIR)).with_context(|| format!("creating {}", root.display()))?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = sample_path(&s.sample_id);
        write_container(&root.join(&rel), &sample_tensors(s))?;
        entries.push(ManifestEntry { sample_id: s.sample_id.clone(), domain_id: s.domain_id, path: rel });
    }
    write_manifest(root, &entries)
}

pub fn load_dataset(root: &Path) -> Result<Dataset> {
    if !root.is_dir() {
        bail!("data directory {} does not exist", root.display());
    }
    let entries = read_manifest(root)?;
    let samples = entries
        .iter()
        .map(|e| {
            let t = read_container(&root.join(&e.path))?;
            sample_from_tensors(&t, &e.sample_id, e.domain_id)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { root: root.to_path_buf(), entries, samples })
}

/// Network parameters plus `meta.C`, `meta.n` and `meta.delta`.
pub fn checkpoint_tensors(net: &SegNet, n_points: usize, delta: f64) -> Vec<NamedTensor> {
    let mut t = net.theta.to_tensors();
    t.push(NamedTensor::scalar("meta.C", net.classes() as f64));
    t.push(NamedTensor::scalar("meta.n", n_points as f64));
    t.push(NamedTensor::scalar("meta.delta", delta));
    t
}

pub fn save_checkpoint(path: &Path, net: &SegNet, n_points: usize, delta: f64) -> Result<()> {
    write_container(path, &checkpoint_tensors(net, n_points, delta))
}

pub fn load_checkpoint(path: &Path) -> Result<SegNet> {
    let t = read_container(path)?;
    Ok(SegNet::from_params(ParamSet::from_tensors(&t)?)?)
}

/// The network exactly as a checkpoint round trip would return it.
pub fn as_stored(net: &SegNet) -> Result<SegNet> {
    let bytes = container::encode(&net.theta.to_tensors())?;
    Ok(SegNet::from_params(ParamSet::from_tensors(&container::decode(&bytes)?)?)?)
}
