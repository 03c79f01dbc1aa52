//! Dataset manifests, family-level folds, pair lists, the `KFV1` feature
//! container and baseline features.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::binio::*;
use crate::error::{Error, Result};
use crate::imaging::{luminance, resize_bilinear, Image};
use crate::subspace::Tensor3;

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Father,
    Mother,
    Son,
    Daughter,
    Parent,
    Child,
}

impl Role {
    pub fn is_parent(self) -> bool {
        matches!(self, Role::Father | Role::Mother | Role::Parent)
    }
}

/// Kin relation of a parent/child pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Relation {
    FS,
    FD,
    MS,
    MD,
    PC,
}

impl Relation {
    pub fn from_roles(parent: Role, child: Role) -> Relation {
        match (parent, child) {
            (Role::Father, Role::Son) => Relation::FS,
            (Role::Father, Role::Daughter) => Relation::FD,
            (Role::Mother, Role::Son) => Relation::MS,
            (Role::Mother, Role::Daughter) => Relation::MD,
            _ => Relation::PC,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::FS => "FS",
            Relation::FD => "FD",
            Relation::MS => "MS",
            Relation::MD => "MD",
            Relation::PC => "PC",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageEntry {
    pub id: String,
    pub path: String,
    pub role: Role,
    pub family_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSpec {
    pub parent_id: String,
    pub child_id: String,
    pub relation: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub name: String,
    pub images: Vec<ImageEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pairs: Option<Vec<PairSpec>>,
    /// Directory image paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    /// Checks id uniqueness and pair references.
    pub fn validate(&self) -> Result<()> {
        if self.schema != MANIFEST_SCHEMA {
            return Err(Error::Manifest(format!(
                "unsupported schema {} (expected {MANIFEST_SCHEMA})",
                self.schema
            )));
        }
        let mut seen = BTreeSet::new();
        for img in &self.images {
            if !seen.insert(img.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate image id {:?}", img.id)));
            }
        }
        for p in self.pairs.iter().flatten() {
            for id in [&p.parent_id, &p.child_id] {
                if !seen.contains(id.as_str()) {
                    return Err(Error::Manifest(format!("pair references missing image id {id:?}")));
                }
            }
            let (parent, child) = (self.image(&p.parent_id).unwrap(), self.image(&p.child_id).unwrap());
            if parent.family_id != child.family_id {
                return Err(Error::Manifest(format!(
                    "kin pair ({}, {}) spans families {} and {}",
                    p.parent_id, p.child_id, parent.family_id, child.family_id
                )));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ImageEntry> {
        self.images.iter().find(|i| i.id == id)
    }

    pub fn image_path(&self, entry: &ImageEntry) -> PathBuf {
        self.base_dir.join(&entry.path)
    }

    pub fn family_of(&self, id: &str) -> Option<&str> {
        self.image(id).map(|i| i.family_id.as_str())
    }

    /// Sorted distinct family ids.
    pub fn families(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.images.iter().map(|i| i.family_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    /// Explicit kin pairs, or every parent-role × child-role combination
    /// within each family when none are listed.
    pub fn positive_pairs(&self) -> Vec<PairSpec> {
        if let Some(pairs) = &self.pairs {
            return pairs.clone();
        }
        let mut by_family: BTreeMap<&str, Vec<&ImageEntry>> = BTreeMap::new();
        for img in &self.images {
            by_family.entry(&img.family_id).or_default().push(img);
        }
        let mut out = Vec::new();
        for members in by_family.values() {
            for parent in members.iter().filter(|m| m.role.is_parent()) {
                for child in members.iter().filter(|m| !m.role.is_parent()) {
                    out.push(PairSpec {
                        parent_id: parent.id.clone(),
                        child_id: child.id.clone(),
                        relation: Relation::from_roles(parent.role, child.role),
                    });
                }
            }
        }
        out
    }
}

/// Reads and validates a JSON manifest; relative image paths resolve against
/// the manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    manifest.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_json(manifest, path)
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Family → fold assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, family: &str) -> Option<usize> {
        self.assignment.get(family).copied()
    }

    pub fn families_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(fam, _)| fam.as_str())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Shuffles the sorted family ids with PCG32 (`pcg32`, 64-bit LCG state,
/// XSH-RR output) seeded from `seed`, then deals them round-robin into `k`
/// folds.
pub fn generate_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut families = manifest.families();
    if k < 2 || k > families.len() {
        return Err(Error::Protocol(format!(
            "fold count {k} must be between 2 and the number of families ({})",
            families.len()
        )));
    }
    let mut rng = Pcg32::seed_from_u64(seed);
    families.shuffle(&mut rng);
    let assignment = families.into_iter().enumerate().map(|(i, f)| (f, i % k)).collect();
    Ok(FoldAssignment { k, seed, assignment })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Kin,
    NonKin,
}

impl Label {
    pub fn is_kin(self) -> bool {
        self == Label::Kin
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub parent_id: String,
    pub child_id: String,
    pub label: Label,
    pub relation: Relation,
    pub fold: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairList {
    pub entries: Vec<PairEntry>,
}

impl PairList {
    pub fn fold(&self, fold: usize) -> impl Iterator<Item = &PairEntry> {
        self.entries.iter().filter(move |e| e.fold == fold)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// One non-kin pair per positive: parent `i` is matched with the child of
/// positive `π(i)` from a different family. The matching is found by
/// augmenting paths over seeded-random visiting orders, so it exists whenever
/// any valid assignment does.
pub fn generate_negative_pairs(
    positives: &[PairEntry],
    manifest: &DatasetManifest,
    seed: u64,
) -> Result<Vec<PairEntry>> {
    let family = |id: &str| {
        manifest
            .family_of(id)
            .ok_or_else(|| Error::Manifest(format!("pair references missing image id {id:?}")))
    };
    let n = positives.len();
    let parent_fam = positives.iter().map(|p| family(&p.parent_id)).collect::<Result<Vec<_>>>()?;
    let child_fam = positives.iter().map(|p| family(&p.child_id)).collect::<Result<Vec<_>>>()?;
    let distinct: BTreeSet<&str> = parent_fam.iter().chain(&child_fam).copied().collect();
    if distinct.len() < 2 {
        return Err(Error::Protocol(
            "negative pairs need positives from at least two families".into(),
        ));
    }

    let mut rng = Pcg32::seed_from_u64(seed);
    let mut parent_order: Vec<usize> = (0..n).collect();
    parent_order.shuffle(&mut rng);
    let candidates: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut c: Vec<usize> = (0..n).filter(|&j| child_fam[j] != parent_fam[i]).collect();
            c.shuffle(&mut rng);
            c
        })
        .collect();

    // child index -> parent index
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn augment(i: usize, cand: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &j in &cand[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|other| augment(other, cand, owner, seen)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    for &i in &parent_order {
        let mut seen = vec![false; n];
        if !augment(i, &candidates, &mut owner, &mut seen) {
            return Err(Error::Protocol(format!(
                "no cross-family assignment exists for {n} positives (one family dominates)"
            )));
        }
    }
    let mut child_of = vec![0usize; n];
    for (j, o) in owner.iter().enumerate() {
        child_of[o.expect("perfect matching")] = j;
    }
    Ok(positives
        .iter()
        .enumerate()
        .map(|(i, p)| PairEntry {
            parent_id: p.parent_id.clone(),
            child_id: positives[child_of[i]].child_id.clone(),
            label: Label::NonKin,
            relation: p.relation,
            fold: p.fold,
        })
        .collect())
}

/// Positive pairs tagged with their family's fold, plus balanced negatives
/// drawn within each fold (per relation when possible).
pub fn make_pair_list(manifest: &DatasetManifest, folds: &FoldAssignment, seed: u64) -> Result<PairList> {
    let mut positives = Vec::new();
    for p in manifest.positive_pairs() {
        let fam = manifest
            .family_of(&p.parent_id)
            .ok_or_else(|| Error::Manifest(format!("pair references missing image id {:?}", p.parent_id)))?;
        let fold = folds
            .fold_of(fam)
            .ok_or_else(|| Error::Protocol(format!("family {fam:?} has no fold assignment")))?;
        positives.push(PairEntry {
            parent_id: p.parent_id,
            child_id: p.child_id,
            label: Label::Kin,
            relation: p.relation,
            fold,
        });
    }
    let mut entries = Vec::with_capacity(positives.len() * 2);
    for fold in 0..folds.k {
        let in_fold: Vec<PairEntry> = positives.iter().filter(|p| p.fold == fold).cloned().collect();
        if in_fold.is_empty() {
            continue;
        }
        let fold_seed = seed.wrapping_add((fold as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut by_relation: BTreeMap<Relation, Vec<PairEntry>> = BTreeMap::new();
        for p in &in_fold {
            by_relation.entry(p.relation).or_default().push(p.clone());
        }
        let grouped: Result<Vec<Vec<PairEntry>>> = by_relation
            .values()
            .enumerate()
            .map(|(g, group)| generate_negative_pairs(group, manifest, fold_seed.wrapping_add(g as u64)))
            .collect();
        let negatives = match grouped {
            Ok(groups) => groups.into_iter().flatten().collect(),
            Err(_) => generate_negative_pairs(&in_fold, manifest, fold_seed)?,
        };
        entries.extend(in_fold);
        entries.extend(negatives);
    }
    Ok(PairList { entries })
}

/// Per-sample feature matrix, `mode1 × mode2`, column-major (column `j`
/// contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub sample_id: String,
    mode1: usize,
    mode2: usize,
    data: Vec<f32>,
}

impl FeatureBlock {
    pub fn new(sample_id: impl Into<String>, mode1: usize, mode2: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != mode1 * mode2 {
            return Err(Error::DimensionMismatch(format!(
                "feature block {mode1}x{mode2} needs {} values, got {}",
                mode1 * mode2,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("feature values must be finite".into()));
        }
        Ok(Self {
            sample_id: sample_id.into(),
            mode1,
            mode2,
            data,
        })
    }

    pub fn mode1(&self) -> usize {
        self.mode1
    }

    pub fn mode2(&self) -> usize {
        self.mode2
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn column(&self, j: usize) -> &[f32] {
        &self.data[j * self.mode1..(j + 1) * self.mode1]
    }

    /// Reinterprets the column-major values with a new shape of equal size.
    pub fn reshaped(&self, mode1: usize, mode2: usize) -> Result<FeatureBlock> {
        FeatureBlock::new(self.sample_id.clone(), mode1, mode2, self.data.clone())
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(self.mode1, self.mode2, self.data.iter().map(|&v| f64::from(v)))
    }
}

const FEATURE_MAGIC: &[u8; 4] = b"KFV1";
const FEATURE_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes blocks to the `KFV1` layout.
pub fn encode_features(blocks: &[FeatureBlock], out: &mut impl Write) -> Result<()> {
    let (mode1, mode2) = blocks.first().map(|b| (b.mode1, b.mode2)).unwrap_or((0, 0));
    if let Some(b) = blocks.iter().find(|b| (b.mode1, b.mode2) != (mode1, mode2)) {
        return Err(Error::DimensionMismatch(format!(
            "block {:?} is {}x{}, expected {mode1}x{mode2}",
            b.sample_id, b.mode1, b.mode2
        )));
    }
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        let mut w = w;
        w.write_all(FEATURE_MAGIC)?;
        put_u32(&mut w, FEATURE_VERSION)?;
        put_u32(&mut w, blocks.len() as u32)?;
        put_u32(&mut w, mode1 as u32)?;
        put_u32(&mut w, mode2 as u32)?;
        w.write_all(&[DTYPE_F32, 0, 0, 0])?;
        for b in blocks {
            put_u16(&mut w, b.sample_id.len() as u16)?;
            w.write_all(b.sample_id.as_bytes())?;
            for &v in &b.data {
                put_f32(&mut w, v)?;
            }
        }
        Ok(())
    };
    if let Some(b) = blocks.iter().find(|b| b.sample_id.len() > u16::MAX as usize) {
        return Err(Error::FeatureFile(format!("sample id of {} bytes is too long", b.sample_id.len())));
    }
    write(out).map_err(|e| Error::FeatureFile(e.to_string()))
}

/// Parses a `KFV1` stream.
pub fn decode_features(input: &mut impl Read) -> Result<Vec<FeatureBlock>> {
    let trunc = |what: &str| {
        let what = what.to_owned();
        move |e: std::io::Error| Error::FeatureFile(format!("truncated {what}: {e}"))
    };
    let magic: [u8; 4] = get_bytes(input).map_err(trunc("header"))?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::FeatureFile(format!("bad magic {magic:02x?}")));
    }
    let version = get_u32(input).map_err(trunc("header"))?;
    if version != FEATURE_VERSION {
        return Err(Error::FeatureFile(format!("unsupported version {version}")));
    }
    let n = get_u32(input).map_err(trunc("header"))? as usize;
    let mode1 = get_u32(input).map_err(trunc("header"))? as usize;
    let mode2 = get_u32(input).map_err(trunc("header"))? as usize;
    let dtype = get_u8(input).map_err(trunc("header"))?;
    let _pad: [u8; 3] = get_bytes(input).map_err(trunc("header"))?;
    if dtype != DTYPE_F32 {
        return Err(Error::FeatureFile(format!("unsupported dtype code {dtype}")));
    }
    let mut blocks = Vec::with_capacity(n.min(1 << 16));
    for s in 0..n {
        let len = get_u16(input).map_err(trunc("sample id"))? as usize;
        let mut id = vec![0u8; len];
        input.read_exact(&mut id).map_err(trunc("sample id"))?;
        let id = String::from_utf8(id).map_err(|_| Error::FeatureFile(format!("sample {s} id is not UTF-8")))?;
        let mut data = Vec::with_capacity(mode1 * mode2);
        for _ in 0..mode1 * mode2 {
            data.push(get_f32(input).map_err(trunc(&format!("values of sample {id:?}")))?);
        }
        blocks.push(FeatureBlock::new(id, mode1, mode2, data)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(|e| Error::FeatureFile(e.to_string()))? != 0 {
        return Err(Error::FeatureFile("trailing bytes after the last sample".into()));
    }
    Ok(blocks)
}

pub fn write_feature_file(blocks: &[FeatureBlock], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_features(blocks, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Vec<FeatureBlock>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_features(&mut BufReader::new(file))
        .map_err(|e| Error::FeatureFile(format!("{}: {e}", path.display())))
}

/// Stacks blocks of identical `layout` into an `I1×I2×N` tensor, preserving
/// order.
pub fn assemble_tensor(blocks: &[&FeatureBlock], layout: (usize, usize)) -> Result<Tensor3> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("no feature blocks to assemble".into()));
    }
    let mut data = Vec::with_capacity(layout.0 * layout.1 * blocks.len());
    for b in blocks {
        if (b.mode1, b.mode2) != layout {
            return Err(Error::DimensionMismatch(format!(
                "block {:?} is {}x{}, layout is {}x{}",
                b.sample_id, b.mode1, b.mode2, layout.0, layout.1
            )));
        }
        data.extend(b.data.iter().map(|&v| f64::from(v)));
    }
    Tensor3::new([layout.0, layout.1, blocks.len()], data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineMode {
    Raw,
    Histogram,
}

pub const BASELINE_SIZE: usize = 64;

/// Raw 64×64 grayscale pixels (4096×1) or their 256-bin intensity histogram
/// (256×1).
pub fn baseline_features(img: &Image, mode: BaselineMode, sample_id: &str) -> Result<FeatureBlock> {
    let small = resize_bilinear(img, BASELINE_SIZE, BASELINE_SIZE)?;
    let gray = luminance(&small);
    match mode {
        BaselineMode::Raw => {
            let data = gray.data().iter().map(|&v| v as f32).collect();
            FeatureBlock::new(sample_id, BASELINE_SIZE * BASELINE_SIZE, 1, data)
        }
        BaselineMode::Histogram => {
            let mut hist = vec![0f32; 256];
            for &v in gray.data() {
                hist[v.round().clamp(0.0, 255.0) as usize] += 1.0;
            }
            FeatureBlock::new(sample_id, 256, 1, hist)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Plane;

    fn entry(id: &str, role: Role, fam: &str) -> ImageEntry {
        ImageEntry {
            id: id.into(),
            path: format!("{id}.png"),
            role,
            family_id: fam.into(),
            subset: None,
        }
    }

    fn manifest(images: Vec<ImageEntry>) -> DatasetManifest {
        DatasetManifest {
            schema: 1,
            name: "t".into(),
            images,
            pairs: None,
            base_dir: PathBuf::new(),
        }
    }

    #[test]
    fn derived_pairs() {
        let m = manifest(vec![entry("F1", Role::Father, "a"), entry("S1", Role::Son, "a")]);
        assert_eq!(
            m.positive_pairs(),
            vec![PairSpec {
                parent_id: "F1".into(),
                child_id: "S1".into(),
                relation: Relation::FS
            }]
        );
        let ts = manifest(vec![
            entry("F", Role::Father, "t"),
            entry("M", Role::Mother, "t"),
            entry("D", Role::Daughter, "t"),
        ]);
        let rel: Vec<_> = ts.positive_pairs().iter().map(|p| p.relation).collect();
        assert_eq!(rel, vec![Relation::FD, Relation::MD]);
    }

    #[test]
    fn manifest_errors() {
        let mut m = manifest(vec![entry("A", Role::Father, "a"), entry("A", Role::Son, "a")]);
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));
        m.images[1].id = "B".into();
        m.pairs = Some(vec![PairSpec {
            parent_id: "A".into(),
            child_id: "missing".into(),
            relation: Relation::FS,
        }]);
        assert!(matches!(m.validate(), Err(Error::Manifest(_))));
        let bad_role = r#"{"schema":1,"name":"x","images":[{"id":"a","path":"a.png","role":"uncle","family_id":"f"}]}"#;
        assert!(serde_json::from_str::<DatasetManifest>(bad_role).is_err());
    }

    fn families(n: usize) -> DatasetManifest {
        let mut images = Vec::new();
        for f in 0..n {
            images.push(entry(&format!("p{f}"), Role::Parent, &format!("fam{f:03}")));
            images.push(entry(&format!("c{f}"), Role::Child, &format!("fam{f:03}")));
        }
        manifest(images)
    }

    #[test]
    fn folds_balanced_and_deterministic() {
        let m = families(10);
        let f = generate_folds(&m, 5, 42).unwrap();
        for k in 0..5 {
            assert_eq!(f.families_in(k).len(), 2);
        }
        assert_eq!(f, generate_folds(&m, 5, 42).unwrap());
        let big = families(100);
        assert_ne!(
            generate_folds(&big, 5, 1).unwrap().assignment,
            generate_folds(&big, 5, 2).unwrap().assignment
        );
        assert!(generate_folds(&m, 1, 0).is_err());
        assert!(generate_folds(&m, 11, 0).is_err());
    }

    fn positives(m: &DatasetManifest) -> Vec<PairEntry> {
        m.positive_pairs()
            .into_iter()
            .map(|p| PairEntry {
                parent_id: p.parent_id,
                child_id: p.child_id,
                label: Label::Kin,
                relation: p.relation,
                fold: 0,
            })
            .collect()
    }

    #[test]
    fn negatives_two_families_swap() {
        let m = families(2);
        let neg = generate_negative_pairs(&positives(&m), &m, 3).unwrap();
        assert_eq!(neg[0].child_id, "c1");
        assert_eq!(neg[1].child_id, "c0");
        assert!(neg.iter().all(|n| n.label == Label::NonKin));
    }

    #[test]
    fn negatives_single_family_error() {
        let m = manifest(vec![
            entry("F", Role::Father, "a"),
            entry("S", Role::Son, "a"),
            entry("D", Role::Daughter, "a"),
        ]);
        assert!(matches!(
            generate_negative_pairs(&positives(&m), &m, 0),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn pair_list_balanced_per_fold() {
        let m = families(13);
        let folds = generate_folds(&m, 5, 9).unwrap();
        let pairs = make_pair_list(&m, &folds, 9).unwrap();
        for k in 0..5 {
            let kin = pairs.fold(k).filter(|e| e.label.is_kin()).count();
            let non = pairs.fold(k).filter(|e| !e.label.is_kin()).count();
            assert_eq!(kin, non);
        }
        for e in pairs.entries.iter().filter(|e| !e.label.is_kin()) {
            assert_ne!(m.family_of(&e.parent_id), m.family_of(&e.child_id));
        }
    }

    #[test]
    fn feature_round_trip_and_errors() {
        let blocks: Vec<_> = (0..3)
            .map(|s| {
                FeatureBlock::new(format!("s{s}"), 4096, 4, (0..4096 * 4).map(|v| (v * (s + 1)) as f32 * 0.25).collect())
                    .unwrap()
            })
            .collect();
        let mut bytes = Vec::new();
        encode_features(&blocks, &mut bytes).unwrap();
        assert_eq!(decode_features(&mut bytes.as_slice()).unwrap(), blocks);
        let mut again = Vec::new();
        encode_features(&decode_features(&mut bytes.as_slice()).unwrap(), &mut again).unwrap();
        assert_eq!(again, bytes);

        let mut empty = Vec::new();
        encode_features(&[], &mut empty).unwrap();
        assert_eq!(empty.len(), 24);
        assert!(decode_features(&mut empty.as_slice()).unwrap().is_empty());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&mut bad.as_slice()), Err(Error::FeatureFile(_))));

        // Header says 3072 per column but only 3071 values follow.
        let short = FeatureBlock::new("x", 3072, 1, vec![1.0; 3072]).unwrap();
        let mut buf = Vec::new();
        encode_features(&[short], &mut buf).unwrap();
        buf.truncate(buf.len() - 4);
        let err = decode_features(&mut buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mixed = [
            FeatureBlock::new("a", 2, 1, vec![0.0; 2]).unwrap(),
            FeatureBlock::new("b", 1, 2, vec![0.0; 2]).unwrap(),
        ];
        assert!(encode_features(&mixed, &mut Vec::new()).is_err());
    }

    #[test]
    fn tensor_assembly() {
        let a = FeatureBlock::new("a", 3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = FeatureBlock::new("b", 3, 2, vec![7., 8., 9., 10., 11., 12.]).unwrap();
        let t = assemble_tensor(&[&a, &b], (3, 2)).unwrap();
        assert_eq!(t.dims(), [3, 2, 2]);
        assert_eq!(t.slice(1), b.to_matrix());
        assert_eq!(assemble_tensor(&[&a], (3, 2)).unwrap().dims()[2], 1);
        assert!(assemble_tensor(&[&a, &b.reshaped(2, 3).unwrap()], (3, 2)).is_err());
    }

    #[test]
    fn baselines() {
        let c = Plane::filled(30, 40, 128.0).unwrap();
        let img = Image::rgb(c.clone(), c.clone(), c).unwrap();
        let h = baseline_features(&img, BaselineMode::Histogram, "x").unwrap();
        assert_eq!((h.mode1(), h.mode2()), (256, 1));
        assert_eq!(h.data()[128], 4096.0);
        assert_eq!(h.data().iter().sum::<f32>(), 4096.0);
        let z = Plane::filled(10, 10, 0.0).unwrap();
        let black = Image::rgb(z.clone(), z.clone(), z).unwrap();
        let raw = baseline_features(&black, BaselineMode::Raw, "x").unwrap();
        assert_eq!(raw.data().len(), 4096);
        assert!(raw.data().iter().all(|&v| v == 0.0));
    }
}
