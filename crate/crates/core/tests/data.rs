use std::fs;

use proptest::prelude::*;
use resmatch::augment_text::PositionLexicon;
use resmatch::data::*;
use resmatch::rng::SeedTree;
use resmatch::types::Mask;
use resmatch::Error;

fn synthetic(dir: &std::path::Path, train: usize, val: usize, seed: u64) -> DatasetManifest {
    make_synthetic(
        dir,
        &SyntheticSpec {
            train,
            val,
            image_size: 32,
            seed,
        },
    )
    .unwrap()
}

#[test]
fn empty_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(MANIFEST_FILE), "").unwrap();
    let m = DatasetManifest::load(dir.path()).unwrap();
    assert!(m.is_empty());
    assert_eq!(m.source(), DatasetSource::RefcocoFormat);
}

#[test]
fn synthetic_manifest_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let written = synthetic(dir.path(), 6, 2, 3);
    let loaded = DatasetManifest::load(dir.path()).unwrap();
    assert_eq!(loaded, written);
    assert_eq!(loaded.source(), DatasetSource::Synthetic);
    assert_eq!(loaded.split(SplitTag::Train).count(), 6);
    assert_eq!(loaded.split(SplitTag::Val).count(), 2);
}

#[test]
fn missing_images_are_all_listed() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 4, 0, 1);
    let gone: Vec<_> = m.records()[1..3].iter().map(|r| m.image_path(r)).collect();
    for p in &gone {
        fs::remove_file(p).unwrap();
    }
    match DatasetManifest::load(dir.path()) {
        Err(Error::MissingImages(paths)) => assert_eq!(paths, gone),
        other => panic!("expected missing-image error, got {other:?}"),
    }
}

#[test]
fn malformed_rle_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 3, 0, 2);
    let path = dir.path().join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut rec: ManifestRecord = serde_json::from_str(&lines[1]).unwrap();
    rec.mask.as_mut().unwrap().counts.push(5);
    lines[1] = serde_json::to_string(&rec).unwrap();
    fs::write(&path, lines.join("\n")).unwrap();
    match DatasetManifest::load(dir.path()) {
        Err(Error::Record { id, .. }) => assert_eq!(id, rec.id),
        other => panic!("expected record error, got {other:?}"),
    }
}

#[test]
fn unknown_manifest_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join(MANIFEST_FILE),
        r#"{"id":"a","image":"a.png","expression":"x","split":"train","extra":1}"#,
    )
    .unwrap();
    assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::Record { .. })));
}

#[test]
fn synthetic_generation_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synthetic(a.path(), 1, 0, 42);
    let mb = synthetic(b.path(), 1, 0, 42);
    assert_eq!(ma.records(), mb.records());
    let ra = &ma.records()[0];
    assert_eq!(
        fs::read(ma.image_path(ra)).unwrap(),
        fs::read(mb.image_path(&mb.records()[0])).unwrap()
    );
}

#[test]
fn scenes_are_unambiguous_and_well_formed() {
    let lexicon = PositionLexicon::default();
    let stream = SeedTree::new(7).child("scenes");
    for i in 0..400 {
        let scene = generate_scene(64, &mut stream.index(i).rng());
        assert!((2..=4).contains(&scene.shapes.len()));
        assert_eq!(scene.query.count_matches(&scene.shapes), 1);
        assert!(scene.query.matches(&scene.shapes[scene.target]));
        assert!(scene.mask.area() > 0);
        assert_eq!(scene.mask, scene.shapes[scene.target].mask(64));
        // shapes sit in distinct quadrants and never touch each other
        for (a, sa) in scene.shapes.iter().enumerate() {
            for sb in &scene.shapes[a + 1..] {
                assert_ne!(sa.quadrant, sb.quadrant);
                let (ma, mb) = (sa.mask(64), sb.mask(64));
                assert!(ma.values().iter().zip(mb.values()).all(|(x, y)| x & y == 0));
            }
        }
        let expr = scene.expression();
        let has_position = expr
            .split_whitespace()
            .any(|w| lexicon.mirror(w).is_some() || w == "top" || w == "bottom");
        match scene.query {
            ShapeQuery::ColorKind(..) => assert!(!has_position, "{expr}"),
            ShapeQuery::KindSide(..) => assert!(has_position, "{expr}"),
        }
    }
}

#[test]
fn split_examples() {
    let dir = tempfile::tempdir().unwrap();
    let m = synthetic(dir.path(), 100, 0, 5);
    let all = make_split(&m, 1.0, 0).unwrap();
    assert_eq!(all.labeled.len(), 100);
    assert!(all.unlabeled.is_empty());

    let tenth = make_split(&m, 0.10, 0).unwrap();
    assert_eq!(tenth.labeled.len(), 10);
    assert_eq!(tenth.unlabeled.len(), 90);
    assert_eq!(tenth, make_split(&m, 0.10, 0).unwrap());
    tenth.validate(&m).unwrap();

    let s1 = make_split(&m, 0.10, 1).unwrap();
    let s2 = make_split(&m, 0.10, 2).unwrap();
    let s3 = make_split(&m, 0.10, 3).unwrap();
    assert_ne!(s1.labeled, s2.labeled);
    assert_ne!(s2.labeled, s3.labeled);
    assert_ne!(s1.labeled, s3.labeled);

    assert!(matches!(make_split(&m, 0.001, 0), Err(Error::Config(_))));
    assert!(matches!(make_split(&m, 0.0, 0), Err(Error::Config(_))));
    assert!(matches!(make_split(&m, 1.5, 0), Err(Error::Config(_))));

    let path = dir.path().join("split.json");
    tenth.save(&path).unwrap();
    assert_eq!(SemiSplit::load(&path).unwrap(), tenth);
}

proptest! {
    #[test]
    fn split_partitions_train_set(n in 1usize..60, ratio in 0.01f64..=1.0, seed in any::<u64>()) {
        let records = (0..n)
            .map(|i| ManifestRecord {
                id: format!("r{i}"),
                image: format!("{i}.png").into(),
                expression: "red circle".into(),
                mask: Some(Rle::encode(&Mask::zeros(1, 1))),
                split: SplitTag::Train,
            })
            .collect();
        let m = DatasetManifest::new("unused", DatasetSource::Synthetic, records).unwrap();
        match make_split(&m, ratio, seed) {
            Ok(s) => {
                prop_assert_eq!(s.labeled.len(), labeled_count(ratio, n));
                prop_assert_eq!(s.labeled.len() + s.unlabeled.len(), n);
                let mut ids: Vec<_> = s.labeled.iter().chain(&s.unlabeled).cloned().collect();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), n);
            }
            Err(_) => prop_assert_eq!(labeled_count(ratio, n), 0),
        }
    }

    #[test]
    fn decoded_area_equals_foreground_runs(h in 1usize..12, w in 1usize..12, bits in prop::collection::vec(0u8..2, 144)) {
        let mask = Mask::new(h, w, bits[..h * w].to_vec()).unwrap();
        let rle = Rle::encode(&mask);
        prop_assert_eq!(rle.total(), (h * w) as u64);
        let decoded = rle.decode().unwrap();
        prop_assert_eq!(decoded.area() as u64, rle.area());
        prop_assert_eq!(decoded, mask);
    }
}
