//! Synthetic multi-dataset generation and sampling.
//!
//! A [`DatasetSpec`] describes one synthetic dataset: scene ranges, a
//! per-dataset appearance shift, and the label perturbation injected into
//! its annotations. Generation is a pure function of the spec (every sample
//! derives from its own RNG substream), storage is a text manifest plus one
//! little-endian f64 blob, and the mixed-batch sampler draws the same
//! number of samples from every dataset per batch.

pub mod render;

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::config::KvMap;
use crate::error::{Error, Result};
use crate::geom::{perturb_annotation, AnnotationPerturbation, GazeAngles};
use crate::rngs;
use crate::tensor::Tensor;
use render::{render_sample, Appearance, SubjectParams};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DATA_FILE: &str = "data.bin";

// substream tags
const TAG_SUBJECT: u64 = 1;
const TAG_SAMPLE: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub dataset_id: usize,
    pub num_subjects: usize,
    pub samples_per_subject: usize,
    /// Half-widths in degrees: labels are drawn uniformly in ±range.
    pub gaze_range_deg: (f64, f64),
    pub head_range_deg: (f64, f64),
    pub appearance: Appearance,
    pub perturbation: AnnotationPerturbation,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', ',', ' ']) {
            return Err(Error::Config(format!(
                "dataset name '{}' must be non-empty without '/', ',' or spaces",
                self.name
            )));
        }
        if self.num_subjects == 0 || self.samples_per_subject == 0 {
            return Err(Error::Config(format!(
                "dataset '{}': subject and sample counts must be positive",
                self.name
            )));
        }
        let ranges = [
            self.gaze_range_deg.0,
            self.gaze_range_deg.1,
            self.head_range_deg.0,
            self.head_range_deg.1,
        ];
        if ranges.iter().any(|r| !(*r > 0.0) || *r > 120.0) {
            return Err(Error::Config(format!(
                "dataset '{}': ranges must be in (0, 120] degrees",
                self.name
            )));
        }
        if self.dataset_id == 0 && !self.perturbation.is_identity() {
            return Err(Error::Config(format!(
                "dataset '{}' is the anchor (id 0) and must carry the identity perturbation",
                self.name
            )));
        }
        Ok(())
    }

    /// Four datasets echoing the relative diversity of the real benchmark
    /// suites: a wide anchor with clean labels and three narrower sets with
    /// distinct injected inconsistencies.
    pub fn default_four(seed: u64) -> Vec<DatasetSpec> {
        let base = |name: &str, id: usize| DatasetSpec {
            name: name.to_string(),
            dataset_id: id,
            num_subjects: 12,
            samples_per_subject: 50,
            gaze_range_deg: (20.0, 15.0),
            head_range_deg: (10.0, 8.0),
            appearance: Appearance::default(),
            perturbation: AnnotationPerturbation::identity(),
            seed: seed.wrapping_add(id as u64),
        };
        vec![
            DatasetSpec {
                num_subjects: 20,
                samples_per_subject: 50,
                gaze_range_deg: (45.0, 30.0),
                head_range_deg: (25.0, 20.0),
                ..base("D0", 0)
            },
            DatasetSpec {
                appearance: Appearance {
                    brightness: 0.05,
                    contrast: 1.0,
                    iris_scale: 1.05,
                },
                perturbation: AnnotationPerturbation {
                    axis: [0.0, 1.0, 0.0],
                    angle_rad: 6.0f64.to_radians(),
                    bias_yaw: 0.0,
                    bias_pitch: 0.0,
                    noise_std: 0.3f64.to_radians(),
                },
                ..base("D1", 1)
            },
            DatasetSpec {
                appearance: Appearance {
                    brightness: -0.05,
                    contrast: 0.95,
                    iris_scale: 0.95,
                },
                perturbation: AnnotationPerturbation {
                    axis: [1.0, 0.0, 0.0],
                    angle_rad: 6.0f64.to_radians(),
                    bias_yaw: 0.0,
                    bias_pitch: 0.0,
                    noise_std: 0.3f64.to_radians(),
                },
                ..base("D2", 2)
            },
            DatasetSpec {
                appearance: Appearance {
                    brightness: 0.0,
                    contrast: 1.08,
                    iris_scale: 1.0,
                },
                perturbation: AnnotationPerturbation {
                    axis: [0.0, 1.0, 0.0],
                    angle_rad: -5.0f64.to_radians(),
                    bias_yaw: 0.0,
                    bias_pitch: 3.0f64.to_radians(),
                    noise_std: 0.3f64.to_radians(),
                },
                ..base("D3", 3)
            },
        ]
    }

    pub fn write_kv(&self, kv: &mut KvMap, section: &str) {
        let k = |name: &str| format!("{section}.{name}");
        kv.set(&k("name"), &self.name);
        kv.set(&k("dataset_id"), self.dataset_id);
        kv.set(&k("num_subjects"), self.num_subjects);
        kv.set(&k("samples_per_subject"), self.samples_per_subject);
        kv.set(&k("gaze_range_yaw_deg"), self.gaze_range_deg.0);
        kv.set(&k("gaze_range_pitch_deg"), self.gaze_range_deg.1);
        kv.set(&k("head_range_yaw_deg"), self.head_range_deg.0);
        kv.set(&k("head_range_pitch_deg"), self.head_range_deg.1);
        kv.set(&k("brightness"), self.appearance.brightness);
        kv.set(&k("contrast"), self.appearance.contrast);
        kv.set(&k("iris_scale"), self.appearance.iris_scale);
        kv.set(
            &k("rotation_axis"),
            format!(
                "{},{},{}",
                self.perturbation.axis[0], self.perturbation.axis[1], self.perturbation.axis[2]
            ),
        );
        kv.set(&k("rotation_rad"), self.perturbation.angle_rad);
        kv.set(&k("bias_yaw_rad"), self.perturbation.bias_yaw);
        kv.set(&k("bias_pitch_rad"), self.perturbation.bias_pitch);
        kv.set(&k("noise_std_rad"), self.perturbation.noise_std);
        kv.set(&k("seed"), self.seed);
    }

    pub fn read_kv(kv: &KvMap, section: &str) -> Result<Self> {
        let k = |name: &str| format!("{section}.{name}");
        let axis_raw = kv.parse_or::<String>(&k("rotation_axis"), "0,1,0".into())?;
        let axis_parts: Vec<f64> = axis_raw
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("{}: bad axis '{axis_raw}': {e}", k("rotation_axis"))))
            })
            .collect::<Result<Vec<_>>>()?;
        if axis_parts.len() != 3 {
            return Err(Error::Config(format!(
                "{}: need three components, got '{axis_raw}'",
                k("rotation_axis")
            )));
        }
        let spec = DatasetSpec {
            name: kv.require(&k("name"))?.to_string(),
            dataset_id: kv.parse_key(&k("dataset_id"))?,
            num_subjects: kv.parse_key(&k("num_subjects"))?,
            samples_per_subject: kv.parse_key(&k("samples_per_subject"))?,
            gaze_range_deg: (
                kv.parse_key(&k("gaze_range_yaw_deg"))?,
                kv.parse_key(&k("gaze_range_pitch_deg"))?,
            ),
            head_range_deg: (
                kv.parse_key(&k("head_range_yaw_deg"))?,
                kv.parse_key(&k("head_range_pitch_deg"))?,
            ),
            appearance: Appearance {
                brightness: kv.parse_or(&k("brightness"), 0.0)?,
                contrast: kv.parse_or(&k("contrast"), 1.0)?,
                iris_scale: kv.parse_or(&k("iris_scale"), 1.0)?,
            },
            perturbation: AnnotationPerturbation {
                axis: [axis_parts[0], axis_parts[1], axis_parts[2]],
                angle_rad: kv.parse_or(&k("rotation_rad"), 0.0)?,
                bias_yaw: kv.parse_or(&k("bias_yaw_rad"), 0.0)?,
                bias_pitch: kv.parse_or(&k("bias_pitch_rad"), 0.0)?,
                noise_std: kv.parse_or(&k("noise_std_rad"), 0.0)?,
            },
            seed: kv.parse_key(&k("seed"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parses every `[dataset*]` section of a spec file.
    pub fn parse_spec_file(kv: &KvMap) -> Result<Vec<DatasetSpec>> {
        let mut specs = Vec::new();
        for section in kv.section_names() {
            if section.starts_with("dataset") {
                specs.push(DatasetSpec::read_kv(kv, &section)?);
            }
        }
        if specs.is_empty() {
            return Err(Error::Config(
                "spec file defines no [dataset*] sections".into(),
            ));
        }
        let mut ids: Vec<usize> = specs.iter().map(|s| s.dataset_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != specs.len() {
            return Err(Error::Config("dataset ids must be unique".into()));
        }
        Ok(specs)
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub face: Tensor,
    pub left_eye: Tensor,
    pub right_eye: Tensor,
    /// What training sees: the perturbed annotation.
    pub label: GazeAngles,
    /// The clean gaze, kept for recovery diagnostics only.
    pub true_gaze: GazeAngles,
    pub head_pose: GazeAngles,
    pub subject_id: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub face_size: usize,
    pub eye_size: usize,
    pub samples: Vec<Sample>,
}

/// One sample as a pure function of `(spec, subject, index)`.
fn generate_one(
    spec: &DatasetSpec,
    subj: &SubjectParams,
    subject_id: usize,
    index: usize,
    face_size: usize,
    eye_size: usize,
) -> Result<Sample> {
    let mut rng = rngs::substream(spec.seed, &[TAG_SAMPLE, subject_id as u64, index as u64]);
    let gy = spec.gaze_range_deg.0;
    let gp = spec.gaze_range_deg.1;
    let hy = spec.head_range_deg.0;
    let hp = spec.head_range_deg.1;
    let true_gaze = GazeAngles::from_degrees(
        rng.random_range(-gy..gy),
        rng.random_range(-gp..gp),
    );
    let head_pose = GazeAngles::from_degrees(
        rng.random_range(-hy..hy),
        rng.random_range(-hp..hp),
    );
    let (face, left_eye, right_eye) = render_sample(
        true_gaze,
        head_pose,
        subj,
        &spec.appearance,
        face_size,
        eye_size,
    )?;
    let label = perturb_annotation(true_gaze, &spec.perturbation, &mut rng);
    Ok(Sample {
        face,
        left_eye,
        right_eye,
        label,
        true_gaze,
        head_pose,
        subject_id,
    })
}

impl Dataset {
    pub fn generate(spec: &DatasetSpec, face_size: usize, eye_size: usize) -> Result<Dataset> {
        spec.validate()?;
        let mut samples = Vec::with_capacity(spec.num_subjects * spec.samples_per_subject);
        for s in 0..spec.num_subjects {
            let subj =
                SubjectParams::sample(&mut rngs::substream(spec.seed, &[TAG_SUBJECT, s as u64]));
            for i in 0..spec.samples_per_subject {
                samples.push(generate_one(spec, &subj, s, i, face_size, eye_size)?);
            }
        }
        Ok(Dataset {
            spec: spec.clone(),
            face_size,
            eye_size,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Train split: the first 80% of each subject's samples.
    pub fn train_indices(&self) -> Vec<usize> {
        self.split_indices(true)
    }

    /// Held-out split: the last 20% of each subject's samples.
    pub fn test_indices(&self) -> Vec<usize> {
        self.split_indices(false)
    }

    fn split_indices(&self, train: bool) -> Vec<usize> {
        let per = self.spec.samples_per_subject;
        let cut = per - per / 5;
        (0..self.samples.len())
            .filter(|i| {
                let within = i % per;
                (within < cut) == train
            })
            .collect()
    }

    fn sample_floats(&self, s: &Sample) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.sample_stride());
        row.extend_from_slice(s.face.data());
        row.extend_from_slice(s.left_eye.data());
        row.extend_from_slice(s.right_eye.data());
        row.extend_from_slice(&[
            s.label.yaw,
            s.label.pitch,
            s.true_gaze.yaw,
            s.true_gaze.pitch,
            s.head_pose.yaw,
            s.head_pose.pitch,
        ]);
        row
    }

    fn sample_stride(&self) -> usize {
        self.face_size * self.face_size + 2 * self.eye_size * self.eye_size + 6
    }

    fn data_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(self.len() * self.sample_stride() * 8);
        for s in &self.samples {
            for v in self.sample_floats(s) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    /// Hex SHA-256 of the data blob.
    pub fn content_hash(&self) -> String {
        hex_digest(&self.data_bytes())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let bytes = self.data_bytes();
        std::fs::write(dir.join(DATA_FILE), &bytes)?;

        let mut kv = KvMap::default();
        self.spec.write_kv(&mut kv, "dataset");
        kv.set("data.face_size", self.face_size);
        kv.set("data.eye_size", self.eye_size);
        kv.set("data.num_samples", self.len());
        kv.set("data.file", DATA_FILE);
        kv.set("data.content_hash", hex_digest(&bytes));
        let mut text = kv.render();
        text.push_str("# per-sample index: subject id\n");
        for (i, s) in self.samples.iter().enumerate() {
            let _ = writeln!(text, "index.sample_{i} = {}", s.subject_id);
        }
        std::fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingPath(manifest_path.display().to_string()));
        }
        let kv = KvMap::load(&manifest_path)?;
        let spec = DatasetSpec::read_kv(&kv, "dataset")?;
        let face_size: usize = kv.parse_key("data.face_size")?;
        let eye_size: usize = kv.parse_key("data.eye_size")?;
        let num_samples: usize = kv.parse_key("data.num_samples")?;
        let bytes = std::fs::read(dir.join(DATA_FILE))?;
        let expected_hash = kv.require("data.content_hash")?;
        let actual = hex_digest(&bytes);
        if actual != expected_hash {
            return Err(Error::Config(format!(
                "{}: content hash mismatch (manifest {expected_hash}, data {actual})",
                dir.display()
            )));
        }
        let stride = (face_size * face_size + 2 * eye_size * eye_size + 6) * 8;
        if bytes.len() != stride * num_samples {
            return Err(Error::Config(format!(
                "{}: expected {} bytes, found {}",
                dir.display(),
                stride * num_samples,
                bytes.len()
            )));
        }
        let mut samples = Vec::with_capacity(num_samples);
        let subjects: Vec<usize> = (0..num_samples)
            .map(|i| kv.parse_key::<usize>(&format!("index.sample_{i}")))
            .collect::<Result<_>>()?;
        let mut floats = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
        for subject_id in subjects {
            let face = Tensor::new(vec![face_size, face_size, 1], take(face_size * face_size))?;
            let left_eye = Tensor::new(vec![eye_size, eye_size, 1], take(eye_size * eye_size))?;
            let right_eye = Tensor::new(vec![eye_size, eye_size, 1], take(eye_size * eye_size))?;
            let rest = take(6);
            samples.push(Sample {
                face,
                left_eye,
                right_eye,
                label: GazeAngles::new(rest[0], rest[1]),
                true_gaze: GazeAngles::new(rest[2], rest[3]),
                head_pose: GazeAngles::new(rest[4], rest[5]),
                subject_id,
            });
        }
        Ok(Dataset {
            spec,
            face_size,
            eye_size,
            samples,
        })
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// A batch entry: (position of the dataset in the slice, sample index).
pub type BatchItem = (usize, usize);

/// Equal-composition epoch: every batch holds exactly `batch_size / M`
/// samples from each dataset, and the number of batches is set by the
/// smallest training split.
pub fn mixed_epoch_batches<R: Rng>(
    train_splits: &[Vec<usize>],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<BatchItem>>> {
    let m = train_splits.len();
    if m == 0 {
        return Err(Error::EmptyBatch);
    }
    if batch_size % m != 0 {
        return Err(Error::BatchNotDivisible {
            batch: batch_size,
            num: m,
        });
    }
    let per = batch_size / m;
    let min_len = train_splits.iter().map(Vec::len).min().unwrap_or(0);
    let n_batches = min_len / per;
    if n_batches == 0 {
        return Err(Error::Config(format!(
            "smallest training split ({min_len}) cannot fill one batch share of {per}"
        )));
    }
    let mut shuffled: Vec<Vec<usize>> = Vec::with_capacity(m);
    for split in train_splits {
        let mut idx = split.clone();
        // Fisher-Yates, explicit for a stable RNG draw order
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        shuffled.push(idx);
    }
    let mut batches = Vec::with_capacity(n_batches);
    for b in 0..n_batches {
        let mut batch = Vec::with_capacity(batch_size);
        for (d, idx) in shuffled.iter().enumerate() {
            for k in 0..per {
                batch.push((d, idx[b * per + k]));
            }
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::angular_error_deg;
    use crate::rngs;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            name: "T0".into(),
            dataset_id: 0,
            num_subjects: 3,
            samples_per_subject: 10,
            gaze_range_deg: (30.0, 20.0),
            head_range_deg: (15.0, 10.0),
            appearance: Appearance::default(),
            perturbation: AnnotationPerturbation::identity(),
            seed: 7,
        }
    }

    #[test]
    fn anchor_labels_equal_true_gaze() {
        let ds = Dataset::generate(&small_spec(), 16, 8).unwrap();
        assert_eq!(ds.len(), 30);
        for s in &ds.samples {
            assert_eq!(s.label, s.true_gaze);
        }
    }

    #[test]
    fn rotated_spec_shifts_labels_by_about_the_angle() {
        let spec = DatasetSpec {
            name: "T1".into(),
            dataset_id: 1,
            num_subjects: 20,
            samples_per_subject: 50,
            perturbation: AnnotationPerturbation::yaw_rotation_deg(5.0),
            ..small_spec()
        };
        let ds = Dataset::generate(&spec, 16, 8).unwrap();
        assert!(ds.len() >= 1000);
        let mean: f64 = ds
            .samples
            .iter()
            .map(|s| angular_error_deg(s.label, s.true_gaze))
            .sum::<f64>()
            / ds.len() as f64;
        assert!((4.0..=6.0).contains(&mean), "mean label offset {mean}");
    }

    #[test]
    fn regeneration_is_bitwise_identical() {
        let spec = small_spec();
        let a = Dataset::generate(&spec, 16, 8).unwrap();
        let b = Dataset::generate(&spec, 16, 8).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        let other = Dataset::generate(
            &DatasetSpec {
                seed: 8,
                ..spec
            },
            16,
            8,
        )
        .unwrap();
        assert_ne!(a.content_hash(), other.content_hash());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::generate(&small_spec(), 16, 8).unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.spec, ds.spec);
        assert_eq!(back.len(), ds.len());
        assert_eq!(back.content_hash(), ds.content_hash());
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            assert_eq!(a.face.data(), b.face.data());
            assert_eq!(a.label, b.label);
            assert_eq!(a.subject_id, b.subject_id);
        }
    }

    #[test]
    fn stored_eye_patches_equal_recomputed_crops() {
        let ds = Dataset::generate(&small_spec(), 16, 8).unwrap();
        for s in &ds.samples {
            let subj = SubjectParams::sample(&mut rngs::substream(
                ds.spec.seed,
                &[TAG_SUBJECT, s.subject_id as u64],
            ));
            let (l, r) = render::crop_eyes(&s.face, s.head_pose, &subj, ds.eye_size);
            assert_eq!(s.left_eye.data(), l.data());
            assert_eq!(s.right_eye.data(), r.data());
        }
    }

    #[test]
    fn split_is_per_subject_80_20() {
        let ds = Dataset::generate(&small_spec(), 16, 8).unwrap();
        let train = ds.train_indices();
        let test = ds.test_indices();
        assert_eq!(train.len(), 24);
        assert_eq!(test.len(), 6);
        // the held-out samples are the last 2 of each subject's 10
        for &i in &test {
            assert!(i % 10 >= 8);
        }
    }

    #[test]
    fn mixed_batches_have_equal_composition() {
        let splits = vec![
            (0..40).collect::<Vec<_>>(),
            (0..55).collect(),
            (0..72).collect(),
            (0..41).collect(),
        ];
        let mut rng = rngs::seeded(5);
        let batches = mixed_epoch_batches(&splits, 16, &mut rng).unwrap();
        assert_eq!(batches.len(), 40 / 4);
        for batch in &batches {
            assert_eq!(batch.len(), 16);
            for d in 0..4 {
                assert_eq!(batch.iter().filter(|(ds, _)| *ds == d).count(), 4);
            }
        }
        // no sample is drawn twice within an epoch
        for d in 0..4 {
            let mut seen: Vec<usize> = batches
                .iter()
                .flatten()
                .filter(|(ds, _)| *ds == d)
                .map(|(_, i)| *i)
                .collect();
            let n = seen.len();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), n);
        }
    }

    #[test]
    fn single_dataset_batching_is_plain_shuffling() {
        let splits = vec![(0..30).collect::<Vec<_>>()];
        let mut rng = rngs::seeded(6);
        let batches = mixed_epoch_batches(&splits, 10, &mut rng).unwrap();
        assert_eq!(batches.len(), 3);
        let mut all: Vec<usize> = batches.iter().flatten().map(|(_, i)| *i).collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn indivisible_batch_is_rejected() {
        let splits = vec![vec![0, 1], vec![0, 1], vec![0, 1]];
        assert!(matches!(
            mixed_epoch_batches(&splits, 16, &mut rngs::seeded(0)),
            Err(Error::BatchNotDivisible { batch: 16, num: 3 })
        ));
    }

    #[test]
    fn spec_kv_round_trip() {
        let specs = DatasetSpec::default_four(42);
        let mut kv = KvMap::default();
        for (i, s) in specs.iter().enumerate() {
            s.write_kv(&mut kv, &format!("dataset{i}"));
        }
        let parsed =
            DatasetSpec::parse_spec_file(&KvMap::parse(&kv.render(), "t").unwrap()).unwrap();
        assert_eq!(parsed, specs);
    }

    #[test]
    fn anchor_with_perturbation_is_rejected() {
        let mut spec = small_spec();
        spec.perturbation = AnnotationPerturbation::yaw_rotation_deg(3.0);
        assert!(spec.validate().is_err());
    }
}
