//! On-disk take container: a directory holding `meta.json` plus one raw
//! little-endian blob per array (`.f32` for IEEE-754 float32, `.u8` for labels),
//! all row-major.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array, Array3, Dimension, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grf::ContactParams;
use crate::types::*;

pub const META_FILE: &str = "meta.json";
pub const FORMAT_NAME: &str = "grfnet-take";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_hz: Option<f64>,
    pub units: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonMeta {
    pub names: Vec<String>,
    pub parents: Vec<i32>,
    pub foot_joints: FootJoints,
}

/// Schema of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TakeMeta {
    pub format: String,
    pub version: u32,
    pub synchronized: bool,
    pub subject: SubjectMeta,
    pub skeleton: SkeletonMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<InsoleLayout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_params: Option<ContactParams>,
    /// Every array in the container, keyed by field name.
    pub arrays: BTreeMap<String, ArrayMeta>,
}

/// Human-readable list of violated invariants; empty when the take is valid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, issue: impl Into<String>) {
        self.issues.push(issue.into());
    }
}

pub fn validate_take(take: &Take) -> ValidationReport {
    let mut report = ValidationReport::default();
    let skel = &take.skeleton;
    report.issues.extend(skel.check());
    let j = skel.num_joints();

    let poses = &take.poses;
    let t = poses.frames();
    if t == 0 {
        report.push("poses: no frames");
    }
    if poses.positions.shape()[1] != j || poses.positions.shape()[2] != 3 {
        report.push(format!(
            "poses: shape {:?} does not match {j} joints",
            poses.positions.shape()
        ));
    }
    check_rate(&mut report, "poses", poses.rate_hz);
    check_finite(&mut report, "poses", poses.positions.iter().copied());

    if let Some(orig) = &take.original_poses {
        if orig.positions.shape()[1] != j || orig.positions.shape()[2] != 3 {
            report.push("original_poses: joint count does not match skeleton");
        }
        check_rate(&mut report, "original_poses", orig.rate_hz);
        check_finite(&mut report, "original_poses", orig.positions.iter().copied());
    }

    if let Some(m) = &take.local_motion {
        if m.frames() == 0 {
            report.push("local_motion: no frames");
        }
        if m.rotations.shape()[1] != j || m.rotations.shape()[2] != 4 {
            report.push(format!(
                "local_motion: rotations shape {:?} does not match {j} joints",
                m.rotations.shape()
            ));
        } else {
            'outer: for f in 0..m.frames() {
                for k in 0..j {
                    let n = m.rotation(f, k).norm();
                    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
                        report.push(format!(
                            "local_motion: quaternion norm {n:.6} at frame {f}, joint {k}"
                        ));
                        if report.issues.len() > 64 {
                            break 'outer;
                        }
                    }
                }
            }
        }
        if m.root_translation.shape() != [m.frames(), 3] {
            report.push("local_motion: root_translation must be T×3");
        }
        check_rate(&mut report, "local_motion", m.rate_hz);
        check_finite(&mut report, "root_translation", m.root_translation.iter().copied());
        if take.synchronized && m.frames() != t {
            report.push(format!(
                "synchronized take: local_motion has {} frames, poses {t}",
                m.frames()
            ));
        }
    }

    let mut insole_series: Vec<(&str, usize, f64)> = Vec::new();
    if let Some(p) = &take.pressure {
        check_cells(&mut report, "pressure", p.values.shape());
        check_rate(&mut report, "pressure", p.rate_hz);
        check_nonneg(&mut report, "pressure", p.values.iter().copied());
        insole_series.push(("pressure", p.values.shape()[0], p.rate_hz));
    }
    if let Some(v) = &take.vgrf {
        check_cells(&mut report, "vgrf", v.values.shape());
        check_rate(&mut report, "vgrf", v.rate_hz);
        check_nonneg(&mut report, "vgrf", v.values.iter().copied());
        insole_series.push(("vgrf", v.frames(), v.rate_hz));
    }
    if let Some(c) = &take.contacts {
        if c.labels.shape()[1..] != [2, 2] {
            report.push(format!("contacts: shape {:?} is not T×2×2", c.labels.shape()));
        }
        check_rate(&mut report, "contacts", c.rate_hz);
        if let Some((idx, v)) = c.labels.indexed_iter().find(|(_, &v)| v > 1) {
            report.push(format!("contacts: label {v} at {idx:?} is not binary"));
        }
        insole_series.push(("contacts", c.frames(), c.rate_hz));
    }
    if let Some(imu) = &take.imu {
        if imu.accel.shape()[1..] != [2, 3] {
            report.push(format!("imu_accel: shape {:?} is not T×2×3", imu.accel.shape()));
        }
        check_rate(&mut report, "imu_accel", imu.rate_hz);
        check_finite(&mut report, "imu_accel", imu.accel.iter().copied());
        insole_series.push(("imu_accel", imu.accel.shape()[0], imu.rate_hz));
    }
    if take.synchronized {
        for (name, frames, rate) in insole_series {
            if frames != t || rate != poses.rate_hz {
                report.push(format!(
                    "synchronized take: {name} has {frames} frames at {rate} Hz, poses {t} at {} Hz",
                    poses.rate_hz
                ));
            }
        }
    }

    let meta = &take.meta;
    if !(20.0..=300.0).contains(&meta.weight_kg) {
        report.push(format!("subject: weight {} kg outside [20, 300]", meta.weight_kg));
    }
    if !(1.0..=2.5).contains(&meta.height_m) {
        report.push(format!("subject: height {} m outside [1.0, 2.5]", meta.height_m));
    }
    if let Some(layout) = &take.layout {
        report.issues.extend(layout.check());
    }
    if let Some(p) = &take.contact_params {
        report.issues.extend(p.check());
    }
    report
}

fn check_rate(report: &mut ValidationReport, name: &str, rate: f64) {
    if !(rate > 0.0) || !rate.is_finite() {
        report.push(format!("{name}: rate {rate} Hz must be positive"));
    }
}

fn check_cells(report: &mut ValidationReport, name: &str, shape: &[usize]) {
    if shape[1..] != [2, CELLS] {
        report.push(format!("{name}: shape {shape:?} is not T×2×{CELLS}"));
    }
}

fn check_finite(report: &mut ValidationReport, name: &str, values: impl Iterator<Item = f32>) {
    if let Some((i, v)) = values.enumerate().find(|(_, v)| !v.is_finite()) {
        report.push(format!("{name}: non-finite value {v} at flat index {i}"));
    }
}

fn check_nonneg(report: &mut ValidationReport, name: &str, values: impl Iterator<Item = f32>) {
    if let Some((i, v)) = values.enumerate().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
        report.push(format!("{name}: value {v} at flat index {i} must be finite and >= 0"));
    }
}

pub fn save_take(take: &Take, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let report = validate_take(take);
    if !report.is_valid() {
        return Err(Error::Validation(report.issues));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut arrays = BTreeMap::new();
    let mut put_f32 = |name: &str, data: &[f32], shape: &[usize], rate: Option<f64>, units: &str| {
        let file = format!("{name}.f32");
        write_f32_file(dir.join(&file), data)?;
        arrays.insert(
            name.to_string(),
            ArrayMeta {
                file,
                dtype: Dtype::F32,
                shape: shape.to_vec(),
                rate_hz: rate,
                units: units.into(),
            },
        );
        Ok::<_, Error>(())
    };

    let offsets: Vec<f32> = take.skeleton.offsets.iter().flatten().copied().collect();
    put_f32(
        "skeleton_offsets",
        &offsets,
        &[take.skeleton.num_joints(), 3],
        None,
        "m",
    )?;
    let p = &take.poses;
    put_f32("poses", &flat(&p.positions), p.positions.shape(), Some(p.rate_hz), "m")?;
    if let Some(o) = &take.original_poses {
        put_f32(
            "original_poses",
            &flat(&o.positions),
            o.positions.shape(),
            Some(o.rate_hz),
            "m",
        )?;
    }
    if let Some(m) = &take.local_motion {
        put_f32(
            "root_translation",
            &flat(&m.root_translation),
            m.root_translation.shape(),
            Some(m.rate_hz),
            "m",
        )?;
        put_f32(
            "rotations",
            &flat(&m.rotations),
            m.rotations.shape(),
            Some(m.rate_hz),
            "unit quaternion (w,x,y,z), local to parent",
        )?;
    }
    if let Some(v) = &take.pressure {
        put_f32("pressure", &flat(&v.values), v.values.shape(), Some(v.rate_hz), "N/cm^2")?;
    }
    if let Some(v) = &take.vgrf {
        put_f32(
            "vgrf",
            &flat(&v.values),
            v.values.shape(),
            Some(v.rate_hz),
            "body-weight fraction",
        )?;
    }
    if let Some(imu) = &take.imu {
        put_f32(
            "imu_accel",
            &flat(&imu.accel),
            imu.accel.shape(),
            Some(imu.rate_hz),
            "m/s^2",
        )?;
    }
    if let Some(c) = &take.contacts {
        let file = "contacts.u8".to_string();
        write_u8_file(dir.join(&file), &flat(&c.labels))?;
        arrays.insert(
            "contacts".into(),
            ArrayMeta {
                file,
                dtype: Dtype::U8,
                shape: c.labels.shape().to_vec(),
                rate_hz: Some(c.rate_hz),
                units: "binary label [frame, foot(L,R), location(heel,toe)]".into(),
            },
        );
    }

    let meta = TakeMeta {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        synchronized: take.synchronized,
        subject: take.meta.clone(),
        skeleton: SkeletonMeta {
            names: take.skeleton.names.clone(),
            parents: take.skeleton.parents.clone(),
            foot_joints: take.skeleton.foot_joints,
        },
        layout: take.layout.clone(),
        contact_params: take.contact_params,
        arrays,
    };
    let json = serde_json::to_string_pretty(&meta).expect("take metadata serializes");
    let path = dir.join(META_FILE);
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

pub fn load_take(dir: impl AsRef<Path>) -> Result<Take> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(Error::MissingFile(meta_path));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: TakeMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;
    if meta.format != FORMAT_NAME {
        return Err(Error::InvalidArgument(format!(
            "{}: unknown container format `{}`",
            meta_path.display(),
            meta.format
        )));
    }

    let reader = ArrayReader { dir, meta: &meta };
    let offsets = reader.f32_required::<ndarray::Ix2>("skeleton_offsets")?;
    let skeleton = Skeleton {
        parents: meta.skeleton.parents.clone(),
        offsets: offsets
            .outer_iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect(),
        names: meta.skeleton.names.clone(),
        foot_joints: meta.skeleton.foot_joints,
    };
    let poses = PoseSequence {
        positions: reader.f32_required("poses")?,
        rate_hz: reader.rate("poses")?,
    };
    let original_poses = match reader.f32_optional("original_poses")? {
        Some(positions) => Some(PoseSequence {
            positions,
            rate_hz: reader.rate("original_poses")?,
        }),
        None => None,
    };
    let local_motion = match (
        reader.f32_optional::<ndarray::Ix2>("root_translation")?,
        reader.f32_optional::<ndarray::Ix3>("rotations")?,
    ) {
        (Some(root_translation), Some(rotations)) => Some(LocalMotion {
            root_translation,
            rotations,
            rate_hz: reader.rate("rotations")?,
        }),
        (None, None) => None,
        _ => {
            return Err(Error::Shape(
                "root_translation and rotations must be stored together".into(),
            ))
        }
    };
    let pressure = match reader.f32_optional("pressure")? {
        Some(values) => Some(PressureSequence {
            values,
            rate_hz: reader.rate("pressure")?,
        }),
        None => None,
    };
    let vgrf = match reader.f32_optional("vgrf")? {
        Some(values) => Some(VgrfSequence {
            values,
            rate_hz: reader.rate("vgrf")?,
        }),
        None => None,
    };
    let imu = match reader.f32_optional("imu_accel")? {
        Some(accel) => Some(ImuSequence {
            accel,
            rate_hz: reader.rate("imu_accel")?,
        }),
        None => None,
    };
    let contacts = match meta.arrays.get("contacts") {
        Some(am) => {
            if am.dtype != Dtype::U8 {
                return Err(Error::Shape("contacts must be stored as u8".into()));
            }
            let data = read_u8_file(dir.join(&am.file))?;
            Some(ContactSequence {
                labels: shaped(data, &am.shape, "contacts")?,
                rate_hz: reader.rate("contacts")?,
            })
        }
        None => None,
    };

    let take = Take {
        skeleton,
        local_motion,
        poses,
        pressure,
        vgrf,
        contacts,
        imu,
        meta: meta.subject.clone(),
        original_poses,
        layout: meta.layout.clone(),
        contact_params: meta.contact_params,
        synchronized: meta.synchronized,
    };
    let report = validate_take(&take);
    if !report.is_valid() {
        return Err(Error::Validation(report.issues));
    }
    Ok(take)
}

struct ArrayReader<'a> {
    dir: &'a Path,
    meta: &'a TakeMeta,
}

impl ArrayReader<'_> {
    fn f32_optional<D: Dimension>(&self, name: &str) -> Result<Option<Array<f32, D>>> {
        let Some(am) = self.meta.arrays.get(name) else {
            return Ok(None);
        };
        if am.dtype != Dtype::F32 {
            return Err(Error::Shape(format!("{name} must be stored as f32")));
        }
        let data = read_f32_file(self.dir.join(&am.file))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{} ({})", name, am.file)));
        }
        shaped(data, &am.shape, name).map(Some)
    }

    fn f32_required<D: Dimension>(&self, name: &str) -> Result<Array<f32, D>> {
        self.f32_optional(name)?
            .ok_or_else(|| Error::Shape(format!("meta.json lists no `{name}` array")))
    }

    fn rate(&self, name: &str) -> Result<f64> {
        self.meta.arrays[name]
            .rate_hz
            .ok_or_else(|| Error::Shape(format!("{name}: missing rate_hz")))
    }
}

fn shaped<T, D: Dimension>(data: Vec<T>, shape: &[usize], name: &str) -> Result<Array<T, D>> {
    let expected: usize = shape.iter().product();
    if data.len() != expected {
        return Err(Error::Shape(format!(
            "{name}: meta.json declares shape {shape:?} ({expected} values) but the file holds {}",
            data.len()
        )));
    }
    Array::from_shape_vec(IxDyn(shape), data)
        .map_err(|e| Error::Shape(format!("{name}: {e}")))?
        .into_dimensionality::<D>()
        .map_err(|e| Error::Shape(format!("{name}: wrong rank for {shape:?}: {e}")))
}

fn flat<T: Copy, D: Dimension>(a: &Array<T, D>) -> Vec<T> {
    a.iter().copied().collect()
}

pub fn write_f32_file(path: impl AsRef<Path>, data: &[f32]) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f32_file(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Shape(format!(
            "{}: {} bytes is not a whole number of float32 values",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_u8_file(path: impl AsRef<Path>, data: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

pub fn read_u8_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    read_bytes(path.as_ref())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    if !path.is_file() {
        return Err(Error::MissingFile(PathBuf::from(path)));
    }
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Reads a raw `T×2×16` vGRF blob, e.g. the output of the estimator.
pub fn read_vgrf_file(path: impl AsRef<Path>, rate_hz: f64) -> Result<VgrfSequence> {
    let data = read_f32_file(path)?;
    if data.len() % (2 * CELLS) != 0 {
        return Err(Error::Shape(format!(
            "vGRF blob of {} values is not a multiple of 2×{CELLS}",
            data.len()
        )));
    }
    let frames = data.len() / (2 * CELLS);
    Ok(VgrfSequence {
        values: Array3::from_shape_vec((frames, 2, CELLS), data).expect("length checked"),
        rate_hz,
    })
}

/// Reads a raw `T×2×2` label blob.
pub fn read_contacts_file(path: impl AsRef<Path>, rate_hz: f64) -> Result<ContactSequence> {
    let data = read_u8_file(path)?;
    if data.len() % 4 != 0 {
        return Err(Error::Shape(format!(
            "contact blob of {} bytes is not a multiple of 2×2",
            data.len()
        )));
    }
    let frames = data.len() / 4;
    Ok(ContactSequence {
        labels: Array3::from_shape_vec((frames, 2, 2), data).expect("length checked"),
        rate_hz,
    })
}

/// Placeholder entry point for the released capture database's native files.
///
/// Converting those files needs their exporter's conventions (joint order,
/// insole cell order, units), which are not bundled here. Implementors convert
/// into a [`Take`] and can then use every other tool unchanged.
pub trait TakeImporter {
    fn import(&self, path: &Path) -> Result<Vec<Take>>;
}
