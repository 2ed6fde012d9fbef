//! JSON-lines dataset format, train/test splitting and the planted-model
//! synthetic generator.
//!
//! A file starts with a header line
//! `{"miml_header":1,"num_labels":L,"feature_dim":d}` followed by one bag per
//! line:
//! `{"id":"...","labels":[...],"instances":[[...],...],"instance_labels":[[...],...]}`
//! where `instance_labels` is optional.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MimlError, Result};
use crate::types::{Bag, Dataset, LabelSpace};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    miml_header: u32,
    num_labels: usize,
    feature_dim: usize,
}

/// One bag as it appears on a line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimlFileRecord {
    pub id: String,
    pub labels: Vec<usize>,
    pub instances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_labels: Option<Vec<Vec<usize>>>,
}

impl From<&Bag> for MimlFileRecord {
    fn from(bag: &Bag) -> Self {
        MimlFileRecord {
            id: bag.id.clone(),
            labels: bag.labels.clone(),
            instances: bag.instances().map(<[f64]>::to_vec).collect(),
            instance_labels: bag.instance_labels.clone(),
        }
    }
}

fn load_err(line: usize, message: impl Into<String>) -> MimlError {
    MimlError::Load { line, message: message.into() }
}

/// Parses and validates a dataset from any buffered reader.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => {
            let line = line?;
            serde_json::from_str(&line).map_err(|e| load_err(1, format!("invalid header: {e}")))?
        }
        None => return Err(load_err(1, "missing header line")),
    };
    if header.miml_header != FORMAT_VERSION {
        return Err(load_err(1, format!("unsupported format version {}", header.miml_header)));
    }
    if header.feature_dim == 0 {
        return Err(load_err(1, "feature_dim must be positive"));
    }
    let label_space = LabelSpace::new(header.num_labels).map_err(|e| load_err(1, e.to_string()))?;
    let d = header.feature_dim;

    let mut bags = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MimlFileRecord =
            serde_json::from_str(&line).map_err(|e| load_err(lineno, e.to_string()))?;
        if rec.instances.is_empty() {
            return Err(load_err(lineno, format!("bag {} has no instances", rec.id)));
        }
        for (i, inst) in rec.instances.iter().enumerate() {
            if inst.len() != d {
                return Err(load_err(
                    lineno,
                    format!("instance {i} has dimension {}, expected {d}", inst.len()),
                ));
            }
            if inst.iter().any(|v| !v.is_finite()) {
                return Err(load_err(lineno, format!("instance {i} has non-finite features")));
            }
        }
        if let Some(&l) = rec.labels.iter().find(|&&l| !label_space.is_real(l)) {
            return Err(load_err(lineno, format!("label {l} outside [0, {})", label_space.num_labels)));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(load_err(lineno, format!("duplicate bag id {}", rec.id)));
        }
        let mut bag =
            Bag::new(rec.id, rec.instances, rec.labels).map_err(|e| load_err(lineno, e.to_string()))?;
        if let Some(inst) = rec.instance_labels {
            if inst.iter().flatten().any(|&l| !label_space.is_real(l)) {
                return Err(load_err(lineno, "instance label out of range"));
            }
            bag = bag.with_instance_labels(inst).map_err(|e| load_err(lineno, e.to_string()))?;
        }
        bags.push(bag);
    }
    Ok(Dataset { bags, label_space, feature_dim: d })
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> Result<()> {
    let header = Header {
        miml_header: FORMAT_VERSION,
        num_labels: dataset.label_space.num_labels,
        feature_dim: dataset.feature_dim,
    };
    serde_json::to_writer(&mut writer, &header)?;
    writer.write_all(b"\n")?;
    for bag in &dataset.bags {
        serde_json::to_writer(&mut writer, &MimlFileRecord::from(bag))?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(dataset, BufWriter::new(File::create(path)?))
}

/// Random split into `⌈n·fraction⌉` bags and the remainder, each part keeping
/// the original bag order.
pub fn split<R: Rng + ?Sized>(dataset: &Dataset, fraction: f64, rng: &mut R) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(MimlError::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let n = dataset.len();
    let n_first = ((n as f64 * fraction) - 1e-9).ceil().max(0.0) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let (a, b) = order.split_at(n_first.min(n));
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((dataset.subset(&a), dataset.subset(&b)))
}

/// Parameters of the planted-model generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_bags: usize,
    /// Instances per bag.
    pub z: usize,
    /// Feature dimension, including the trailing constant feature.
    pub d: usize,
    pub num_labels: usize,
    /// Planted sub-concepts per label.
    pub k_true: usize,
    /// Planted shared-space dimension.
    pub m_true: usize,
    pub noise_sigma: f64,
    pub rng_seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_bags", self.n_bags),
            ("z", self.z),
            ("num_labels", self.num_labels),
            ("k_true", self.k_true),
            ("m_true", self.m_true),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(MimlError::Config(format!("{name} must be positive")));
        }
        if self.d < 2 {
            return Err(MimlError::Config("d must be at least 2".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(MimlError::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

/// Ground-truth model behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    d: usize,
    m: usize,
    k: usize,
    projection: Vec<f64>,
    heads: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl PlantedModel {
    /// Per-label planted score margins `max_k u_{l,k}ᵀ P x − τ_l`.
    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        let e: Vec<f64> = self
            .projection
            .chunks_exact(self.d)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        self.thresholds
            .iter()
            .enumerate()
            .map(|(l, &tau)| {
                let best = (0..self.k)
                    .map(|k| {
                        let off = (l * self.k + k) * self.m;
                        self.heads[off..off + self.m].iter().zip(&e).map(|(a, b)| a * b).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                best - tau
            })
            .collect()
    }

    pub fn instance_labels(&self, x: &[f64]) -> Vec<usize> {
        self.margins(x).iter().enumerate().filter(|(_, &s)| s > 0.0).map(|(l, _)| l).collect()
    }
}

/// Cluster centers per (label, planted sub-concept).
const CENTERS_PER_HEAD: usize = 10;
/// Distinct centers an individual bag draws its instances from.
const CENTERS_PER_BAG: usize = 2;
const CALIBRATION_INSTANCES: usize = 5_000;

fn draw_instance<R: Rng + ?Sized>(center: &[f64], noise: &Normal<f64>, rng: &mut R) -> Vec<f64> {
    let d = center.len();
    let mut x: Vec<f64> = center.iter().map(|c| c + noise.sample(rng)).collect();
    x[d - 1] = 1.0;
    x
}

/// Generates a dataset from a freshly drawn planted model.
///
/// Instances are one of `10·L·K_true` Gaussian cluster centers plus
/// isotropic noise of std `noise_sigma`, with the last feature fixed to 1.
/// Each bag draws its instances around two centers of its own. An instance
/// carries label `l` when its planted score exceeds a per-label threshold
/// calibrated so each label covers about `1/L` of instances; a bag's labels
/// are the union of its instances' labels.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(Dataset, PlantedModel)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (d, m, k, l) = (spec.d, spec.m_true, spec.k_true, spec.num_labels);

    let proj_dist = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("finite std");
    let head_dist = Normal::new(0.0, 1.0 / (m as f64).sqrt()).expect("finite std");
    let projection: Vec<f64> = (0..m * d).map(|_| proj_dist.sample(&mut rng)).collect();
    let heads: Vec<f64> = (0..l * k * m).map(|_| head_dist.sample(&mut rng)).collect();

    let n_centers = CENTERS_PER_HEAD * l * k;
    let centers: Vec<Vec<f64>> = (0..n_centers)
        .map(|_| {
            let mut c: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            c[d - 1] = 1.0;
            c
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).expect("finite std");

    let mut planted = PlantedModel { d, m, k, projection, heads, thresholds: vec![0.0; l] };
    let calibration: Vec<Vec<f64>> = (0..CALIBRATION_INSTANCES)
        .map(|_| {
            let c = &centers[rng.random_range(0..n_centers)];
            planted.margins(&draw_instance(c, &noise, &mut rng))
        })
        .collect();
    let quantile_rank = ((1.0 - 1.0 / l as f64) * (CALIBRATION_INSTANCES - 1) as f64).round() as usize;
    for label in 0..l {
        let mut s: Vec<f64> = calibration.iter().map(|row| row[label]).collect();
        s.sort_by(f64::total_cmp);
        planted.thresholds[label] = s[quantile_rank];
    }

    let width = spec.n_bags.to_string().len();
    let mut bags = Vec::with_capacity(spec.n_bags);
    for b in 0..spec.n_bags {
        let own: Vec<usize> = (0..CENTERS_PER_BAG).map(|_| rng.random_range(0..n_centers)).collect();
        let instances: Vec<Vec<f64>> = (0..spec.z)
            .map(|_| draw_instance(&centers[own[rng.random_range(0..own.len())]], &noise, &mut rng))
            .collect();
        let inst_labels: Vec<Vec<usize>> = instances.iter().map(|x| planted.instance_labels(x)).collect();
        let mut labels: Vec<usize> = inst_labels.iter().flatten().copied().collect();
        labels.sort_unstable();
        labels.dedup();
        let bag = Bag::new(format!("bag{b:0width$}"), instances, labels)?.with_instance_labels(inst_labels)?;
        bags.push(bag);
    }
    let ds = Dataset::new(bags, LabelSpace::new(l)?, d)?;
    Ok((ds, planted))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "{\"miml_header\":1,\"num_labels\":3,\"feature_dim\":2}\n";

    fn parse(body: &str) -> Result<Dataset> {
        read_dataset(format!("{SMALL}{body}").as_bytes())
    }

    fn load_line(err: MimlError) -> usize {
        match err {
            MimlError::Load { line, .. } => line,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let ds = parse("").unwrap();
        assert!(ds.is_empty());
        assert_eq!((ds.label_space.num_labels, ds.feature_dim), (3, 2));
    }

    #[test]
    fn errors_report_line_numbers() {
        let ok = "{\"id\":\"a\",\"labels\":[0],\"instances\":[[1,2]]}\n";
        assert_eq!(load_line(parse(&format!("{ok}{{\"id\":\"b\",\"labels\":[1],\"instances\":[[1,2,3]]}}\n")).unwrap_err()), 3);
        assert_eq!(load_line(parse("{\"id\":\"b\",\"labels\":[3],\"instances\":[[1,2]]}\n").unwrap_err()), 2);
        assert_eq!(load_line(parse("{\"id\":\"b\",\"labels\":[-1],\"instances\":[[1,2]]}\n").unwrap_err()), 2);
        assert_eq!(load_line(parse("{\"id\":\"b\",\"labels\":[],\"instances\":[]}\n").unwrap_err()), 2);
        assert_eq!(load_line(parse(&format!("{ok}{ok}")).unwrap_err()), 3);
        assert_eq!(load_line(parse("not json\n").unwrap_err()), 2);
        assert_eq!(load_line(parse("{\"id\":\"b\",\"labels\":[],\"instances\":[[NaN,1]]}\n").unwrap_err()), 2);
        assert_eq!(load_line(read_dataset("".as_bytes()).unwrap_err()), 1);
        assert_eq!(load_line(read_dataset("{\"miml_header\":2,\"num_labels\":3,\"feature_dim\":2}\n".as_bytes()).unwrap_err()), 1);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let spec = SynthSpec {
            n_bags: 144,
            z: 2,
            d: 4,
            num_labels: 3,
            k_true: 1,
            m_true: 2,
            noise_sigma: 0.1,
            rng_seed: 1,
        };
        let (ds, _) = generate_synthetic(&spec).unwrap();
        let (a, b) = split(&ds, 2.0 / 3.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!((a.len(), b.len()), (96, 48));
        let (a2, b2) = split(&ds, 2.0 / 3.0, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!((a.clone(), b.clone()), (a2, b2));
        let mut ids: Vec<&str> = a.bags.iter().chain(&b.bags).map(|x| x.id.as_str()).collect();
        ids.sort_unstable();
        let mut orig: Vec<&str> = ds.bags.iter().map(|x| x.id.as_str()).collect();
        orig.sort_unstable();
        assert_eq!(ids, orig);
        assert!(split(&ds, 1.0, &mut ChaCha8Rng::seed_from_u64(4)).is_err());
    }

    #[test]
    fn single_noiseless_instance_bags() {
        let spec = SynthSpec {
            n_bags: 200,
            z: 1,
            d: 6,
            num_labels: 4,
            k_true: 2,
            m_true: 3,
            noise_sigma: 0.0,
            rng_seed: 5,
        };
        let (ds, planted) = generate_synthetic(&spec).unwrap();
        for bag in &ds.bags {
            let inst = bag.instance_labels.as_ref().unwrap();
            assert_eq!(bag.labels, inst[0]);
            assert_eq!(bag.labels, planted.instance_labels(bag.instance(0)));
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let good = SynthSpec {
            n_bags: 10,
            z: 3,
            d: 5,
            num_labels: 2,
            k_true: 1,
            m_true: 2,
            noise_sigma: 0.1,
            rng_seed: 0,
        };
        assert!(good.validate().is_ok());
        assert!(SynthSpec { z: 0, ..good.clone() }.validate().is_err());
        assert!(SynthSpec { d: 1, ..good.clone() }.validate().is_err());
        assert!(SynthSpec { noise_sigma: -1.0, ..good }.validate().is_err());
    }
}
