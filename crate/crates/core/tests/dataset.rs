use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use kinship_core::dataset::{
    assemble_tensor, decode_features, encode_features, generate_folds, generate_negative_pairs, make_pair_list,
    parse_manifest, read_feature_file, write_feature_file, write_manifest, DatasetManifest, FeatureBlock, ImageEntry,
    Label, PairEntry, Relation, Role, MANIFEST_SCHEMA,
};
use proptest::prelude::*;

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden_deep.kfv")
}

fn entry(id: &str, role: Role, fam: &str) -> ImageEntry {
    ImageEntry {
        id: id.into(),
        path: format!("{id}.png"),
        role,
        family_id: fam.into(),
        subset: None,
    }
}

/// `families` families, each with a father and a son.
fn simple_manifest(families: usize) -> DatasetManifest {
    let mut images = Vec::new();
    for f in 0..families {
        let fam = format!("fam{f:03}");
        images.push(entry(&format!("{fam}_f"), Role::Father, &fam));
        images.push(entry(&format!("{fam}_s"), Role::Son, &fam));
    }
    DatasetManifest {
        schema: MANIFEST_SCHEMA,
        name: "t".into(),
        images,
        pairs: None,
        base_dir: PathBuf::new(),
    }
}

fn write_text(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn manifest_file_derives_pairs_and_resolves_paths() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_text(
        dir.path(),
        r#"{
  "schema": 1,
  "name": "tiny",
  "images": [
    {"id": "F1", "path": "a/F1.png", "role": "father", "family_id": "A"},
    {"id": "S1", "path": "a/S1.png", "role": "son", "family_id": "A", "subset": "c-yp"},
    {"id": "F2", "path": "F2.png", "role": "father", "family_id": "B"},
    {"id": "M2", "path": "M2.png", "role": "mother", "family_id": "B"},
    {"id": "D2", "path": "D2.png", "role": "daughter", "family_id": "B"}
  ]
}"#,
    );
    let m = parse_manifest(&path).unwrap();
    let pairs: Vec<(String, String, Relation)> = m
        .positive_pairs()
        .into_iter()
        .map(|p| (p.parent_id, p.child_id, p.relation))
        .collect();
    assert_eq!(
        pairs,
        vec![
            ("F1".into(), "S1".into(), Relation::FS),
            ("F2".into(), "D2".into(), Relation::FD),
            ("M2".into(), "D2".into(), Relation::MD),
        ]
    );
    assert_eq!(m.image_path(m.image("S1").unwrap()), dir.path().join("a/S1.png"));
    assert_eq!(m.image("S1").unwrap().subset.as_deref(), Some("c-yp"));
}

#[test]
fn manifest_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        r#"{"schema": 1, "name": "x", "images": [
            {"id": "a", "path": "a", "role": "father", "family_id": "A"},
            {"id": "a", "path": "b", "role": "son", "family_id": "A"}]}"#,
        r#"{"schema": 1, "name": "x", "images": [
            {"id": "a", "path": "a", "role": "father", "family_id": "A"}],
            "pairs": [{"parent_id": "a", "child_id": "zz", "relation": "FS"}]}"#,
        r#"{"schema": 1, "name": "x", "images": [
            {"id": "a", "path": "a", "role": "uncle", "family_id": "A"}]}"#,
        r#"{"schema": 2, "name": "x", "images": []}"#,
        r#"{"schema": 1, "name": "x", "images": [
            {"id": "a", "path": "a", "role": "father", "family_id": "A"},
            {"id": "b", "path": "b", "role": "son", "family_id": "B"}],
            "pairs": [{"parent_id": "a", "child_id": "b", "relation": "FS"}]}"#,
        "not json",
    ];
    for text in cases {
        assert!(parse_manifest(&write_text(dir.path(), text)).is_err(), "{text}");
    }
    assert!(parse_manifest(&dir.path().join("absent.json")).is_err());
}

#[test]
fn manifest_write_read_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = simple_manifest(3);
    m.images[1].subset = Some("c-op".into());
    let path = dir.path().join("m.json");
    write_manifest(&m, &path).unwrap();
    let back = parse_manifest(&path).unwrap();
    assert_eq!(back.images, m.images);
    assert_eq!(back.base_dir, dir.path());
}

#[test]
fn ten_families_five_folds() {
    let folds = generate_folds(&simple_manifest(10), 5, 3).unwrap();
    for k in 0..5 {
        assert_eq!(folds.families_in(k).len(), 2);
    }
}

#[test]
fn fold_seeds_matter() {
    let m = simple_manifest(100);
    assert_eq!(generate_folds(&m, 5, 1).unwrap(), generate_folds(&m, 5, 1).unwrap());
    assert_ne!(generate_folds(&m, 5, 1).unwrap().assignment, generate_folds(&m, 5, 2).unwrap().assignment);
}

#[test]
fn fold_count_bounds() {
    let m = simple_manifest(4);
    assert!(generate_folds(&m, 1, 0).is_err());
    assert!(generate_folds(&m, 5, 0).is_err());
    assert!(generate_folds(&m, 4, 0).is_ok());
}

fn positives(families: usize, per_family: usize) -> (DatasetManifest, Vec<PairEntry>) {
    let mut images = Vec::new();
    let mut pos = Vec::new();
    for f in 0..families {
        let fam = format!("fam{f}");
        for i in 0..per_family {
            let (p, c) = (format!("{fam}_p{i}"), format!("{fam}_c{i}"));
            images.push(entry(&p, Role::Father, &fam));
            images.push(entry(&c, Role::Son, &fam));
            pos.push(PairEntry {
                parent_id: p,
                child_id: c,
                label: Label::Kin,
                relation: Relation::FS,
                fold: 0,
            });
        }
    }
    let m = DatasetManifest {
        schema: MANIFEST_SCHEMA,
        name: "n".into(),
        images,
        pairs: Some(vec![]),
        base_dir: PathBuf::new(),
    };
    (m, pos)
}

#[test]
fn two_positives_give_the_swap() {
    let (m, pos) = positives(2, 1);
    let neg = generate_negative_pairs(&pos, &m, 9).unwrap();
    assert_eq!((neg[0].child_id.as_str(), neg[1].child_id.as_str()), ("fam1_c0", "fam0_c0"));
    assert!(neg.iter().all(|n| n.label == Label::NonKin));
}

#[test]
fn negatives_never_share_a_family() {
    let mut families = 2;
    for seed in 0..1000u64 {
        families = families % 9 + 2;
        let per = 20 / families;
        let (m, mut pos) = positives(families, per.max(1));
        pos.truncate(20);
        let neg = generate_negative_pairs(&pos, &m, seed).unwrap();
        assert_eq!(neg.len(), pos.len());
        for n in &neg {
            assert_ne!(m.family_of(&n.parent_id), m.family_of(&n.child_id));
        }
        let children: BTreeSet<&str> = neg.iter().map(|n| n.child_id.as_str()).collect();
        assert_eq!(children.len(), neg.len());
    }
}

#[test]
fn single_family_negatives_fail() {
    let (m, pos) = positives(1, 4);
    assert!(generate_negative_pairs(&pos, &m, 0).is_err());
}

#[test]
fn pair_list_is_balanced_and_cross_family() {
    let m = simple_manifest(23);
    let folds = generate_folds(&m, 5, 7).unwrap();
    let pairs = make_pair_list(&m, &folds, 7).unwrap();
    for k in 0..5 {
        let kin = pairs.fold(k).filter(|e| e.label == Label::Kin).count();
        let non = pairs.fold(k).filter(|e| e.label == Label::NonKin).count();
        assert_eq!(kin, non);
        assert!(kin > 0);
    }
    for e in &pairs.entries {
        let same = m.family_of(&e.parent_id) == m.family_of(&e.child_id);
        assert_eq!(same, e.label == Label::Kin);
        assert_eq!(folds.fold_of(m.family_of(&e.parent_id).unwrap()), Some(e.fold));
    }
    assert_eq!(pairs, make_pair_list(&m, &folds, 7).unwrap());
}

#[test]
fn golden_deep_file_is_read_exactly() {
    let blocks = read_feature_file(&golden_path()).unwrap();
    assert_eq!(blocks.len(), 2);
    for (s, b) in blocks.iter().enumerate() {
        assert_eq!(b.sample_id, ["golden_a", "golden_b"][s]);
        assert_eq!((b.mode1(), b.mode2()), (4096, 4));
        for i in 0..4096 {
            let fc6 = (((i * 37 + s * 11) % 201) as f32 - 100.0) / 64.0;
            let fc7 = (((i * 53 + s * 29) % 157) as f32 - 78.0) / 32.0;
            assert_eq!(b.column(0)[i], fc6);
            assert_eq!(b.column(1)[i], fc6.max(0.0));
            assert_eq!(b.column(2)[i], fc7);
            assert_eq!(b.column(3)[i], fc7.max(0.0));
        }
    }
}

#[test]
fn golden_deep_file_re_encodes_byte_identically() {
    let bytes = std::fs::read(golden_path()).unwrap();
    let blocks = decode_features(&mut bytes.as_slice()).unwrap();
    let mut out = Vec::new();
    encode_features(&blocks, &mut out).unwrap();
    assert_eq!(out, bytes);
}

#[test]
fn golden_deep_blocks_form_a_tensor() {
    let blocks = read_feature_file(&golden_path()).unwrap();
    let refs: Vec<&FeatureBlock> = blocks.iter().collect();
    let t = assemble_tensor(&refs, (4096, 4)).unwrap();
    assert_eq!(t.dims(), [4096, 4, 2]);
    assert_eq!(t.get(5, 2, 1), f64::from(blocks[1].column(2)[5]));
}

#[test]
fn feature_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.kfv");
    let blocks = vec![FeatureBlock::new("a", 3072, 1, vec![0.5; 3072]).unwrap()];
    write_feature_file(&blocks, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(read_feature_file(&path).is_err());

    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(read_feature_file(&path).is_err());

    let mut trailing = bytes.clone();
    trailing.push(0);
    std::fs::write(&path, &trailing).unwrap();
    assert!(read_feature_file(&path).is_err());

    let mixed = vec![
        FeatureBlock::new("a", 2, 1, vec![0.0; 2]).unwrap(),
        FeatureBlock::new("b", 1, 2, vec![0.0; 2]).unwrap(),
    ];
    assert!(write_feature_file(&mixed, &path).is_err());
}

#[test]
fn empty_feature_file() {
    let mut out = Vec::new();
    encode_features(&[], &mut out).unwrap();
    assert_eq!(&out[..4], b"KFV1");
    assert_eq!(out.len(), 24);
    assert!(decode_features(&mut out.as_slice()).unwrap().is_empty());
}

fn blocks_strategy() -> impl Strategy<Value = Vec<FeatureBlock>> {
    (1usize..6, 1usize..4, 0usize..5).prop_flat_map(|(m1, m2, n)| {
        prop::collection::vec(
            ("[a-z0-9_é]{0,12}", prop::collection::vec(-1e6f32..1e6, m1 * m2)),
            n,
        )
        .prop_map(move |items| {
            items
                .into_iter()
                .map(|(id, data)| FeatureBlock::new(id, m1, m2, data).unwrap())
                .collect()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_stream_round_trip(blocks in blocks_strategy()) {
        let mut bytes = Vec::new();
        encode_features(&blocks, &mut bytes).unwrap();
        let back = decode_features(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &blocks);
        let mut again = Vec::new();
        encode_features(&back, &mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn folds_partition_families(families in 2usize..60, k in 2usize..8, seed in any::<u64>()) {
        prop_assume!(k <= families);
        let m = simple_manifest(families);
        let folds = generate_folds(&m, k, seed).unwrap();
        prop_assert_eq!(folds.assignment.len(), families);
        let sizes: Vec<usize> = (0..k).map(|f| folds.families_in(f).len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), families);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for fam in m.families() {
            prop_assert!(folds.fold_of(&fam).unwrap() < k);
        }
    }

    #[test]
    fn tensor_slices_recover_blocks(blocks in blocks_strategy()) {
        prop_assume!(!blocks.is_empty());
        let layout = (blocks[0].mode1(), blocks[0].mode2());
        let refs: Vec<&FeatureBlock> = blocks.iter().collect();
        let t = assemble_tensor(&refs, layout).unwrap();
        for (n, b) in blocks.iter().enumerate() {
            prop_assert_eq!(t.slice(n), b.to_matrix());
        }
    }
}
