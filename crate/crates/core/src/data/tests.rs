use super::*;

fn small() -> SyntheticConfig {
    SyntheticConfig {
        positives: 3,
        negatives: 2,
        ..SyntheticConfig::tiny()
    }
}

#[test]
fn generated_bundle_validates_with_exact_counts() {
    let b = synth_generate(&SyntheticConfig::easy()).unwrap();
    assert_eq!(b.videos.len(), 200);
    assert_eq!(b.manifest.positives(), 100);
    let report = validate_bundle(&b);
    assert!(report.is_valid(), "{:?}", report.failures().next());
    for v in &b.videos {
        match v.onset {
            Some(a) => assert!(v.positive && (30..=45).contains(&a)),
            None => assert!(!v.positive),
        }
    }
}

#[test]
fn generator_is_deterministic() {
    let c = small();
    let a = synth_generate(&c).unwrap();
    let b = synth_generate(&c).unwrap();
    assert_eq!(a, b);
    let d = synth_generate(&c.clone().with_seed(9)).unwrap();
    assert_ne!(a.videos, d.videos);
}

#[test]
fn round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_generate(&small()).unwrap();
    write_bundle(dir.path(), &b).unwrap();
    let back = load_bundle(dir.path()).unwrap();
    assert_eq!(back, b);
    for (x, y) in back.videos.iter().zip(&b.videos) {
        assert_eq!(encode_record(&b.manifest, x).unwrap(), encode_record(&b.manifest, y).unwrap());
    }
}

#[test]
fn same_config_writes_identical_bytes() {
    let b = synth_generate(&small()).unwrap();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    write_bundle(d1.path(), &b).unwrap();
    write_bundle(d2.path(), &synth_generate(&small()).unwrap()).unwrap();
    for e in &b.manifest.videos {
        let name = format!("{}.bin", e.id);
        assert_eq!(std::fs::read(d1.path().join(&name)).unwrap(), std::fs::read(d2.path().join(&name)).unwrap());
    }
    assert_eq!(
        std::fs::read(d1.path().join(MANIFEST_FILE)).unwrap(),
        std::fs::read(d2.path().join(MANIFEST_FILE)).unwrap()
    );
}

#[test]
fn corrupt_byte_names_video() {
    let dir = tempfile::tempdir().unwrap();
    let b = synth_generate(&small()).unwrap();
    write_bundle(dir.path(), &b).unwrap();
    let id = &b.videos[2].id;
    let path = dir.path().join(format!("{id}.bin"));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[100] ^= 0x10;
    std::fs::write(&path, bytes).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(&err, DataError::Checksum { video, .. } if video == id), "{err}");
    assert_eq!(err.video(), Some(id.as_str()));

    let report = validate_dir(dir.path()).unwrap();
    assert_eq!(report.failed(), 1);
    assert_eq!(&report.failures().next().unwrap().id, id);
}

#[test]
fn truncated_record_is_reported() {
    let b = synth_generate(&small()).unwrap();
    let bytes = encode_record(&b.manifest, &b.videos[0]).unwrap();
    let entry = &b.manifest.videos[0];
    let short = &bytes[..bytes.len() / 2];
    let mut fixed = short.to_vec();
    fixed.extend_from_slice(&crc32fast::hash(short).to_le_bytes());
    assert!(matches!(decode_record(&b.manifest, entry, &fixed), Err(DataError::Truncated { .. })));
    assert!(decode_record(&b.manifest, entry, &bytes[..10]).is_err());
}

#[test]
fn onset_beyond_last_frame_is_the_only_failure() {
    let mut b = synth_generate(&small()).unwrap();
    let k = b.videos.iter().position(|v| v.positive).unwrap();
    let bad = b.manifest.frames as u32 + 1;
    b.videos[k].onset = Some(bad);
    b.manifest.videos[k].onset = Some(bad);
    let report = validate_bundle(&b);
    assert_eq!(report.failed(), 1);
    let f = report.failures().next().unwrap();
    assert_eq!(f.id, b.videos[k].id);
    assert!(f.reasons[0].contains("onset"));
}

#[test]
fn mask_inconsistency_is_flagged() {
    let mut b = synth_generate(&small()).unwrap();
    let (v, t, s) = b
        .videos
        .iter()
        .enumerate()
        .find_map(|(v, vid)| {
            vid.frames
                .iter()
                .enumerate()
                .find_map(|(t, f)| f.slots.iter().position(|s| !s.valid).map(|s| (v, t, s)))
        })
        .unwrap();
    b.videos[v].frames[t].slots[s].visual[0] = 0.5;
    let report = validate_bundle(&b);
    assert_eq!(report.failed(), 1);
    assert!(report.failures().next().unwrap().reasons[0].contains("masked slot"));
}

#[test]
fn negative_with_onset_and_positive_without_fail() {
    let mut b = synth_generate(&small()).unwrap();
    let p = b.videos.iter().position(|v| v.positive).unwrap();
    let n = b.videos.iter().position(|v| !v.positive).unwrap();
    b.manifest.videos[p].onset = None;
    b.videos[p].onset = None;
    b.manifest.videos[n].onset = Some(3);
    b.videos[n].onset = Some(3);
    assert_eq!(validate_bundle(&b).failed(), 2);
}

#[test]
fn negative_manifest_entries_carry_no_onset_field() {
    let b = synth_generate(&small()).unwrap();
    let json = serde_json::to_value(&b.manifest).unwrap();
    for v in json["videos"].as_array().unwrap() {
        assert_eq!(v["positive"].as_bool().unwrap(), v.get("onset").is_some());
    }
}

#[test]
fn dad_shaped_manifest() {
    let videos: Vec<VideoEntry> = (0..1750)
        .map(|i| VideoEntry {
            id: format!("dad_{i:04}"),
            positive: i < 620,
            onset: (i < 620).then_some(91 + (i % 10) as u32),
        })
        .collect();
    let m = Manifest {
        format_version: BUNDLE_VERSION,
        dataset: "dad".into(),
        fps: 20.0,
        resampled_from_fps: None,
        frame_width: 1280.0,
        frame_height: 720.0,
        frames: 100,
        slots: 19,
        visual_dim: 4096,
        label_dim: 300,
        global_dim: 2304,
        videos,
    };
    let text = serde_json::to_string(&m).unwrap();
    let back: Manifest = serde_json::from_str(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.positives(), 620);
    assert_eq!(back.frames as f64 / back.fps, 5.0);
    for v in back.videos.iter().filter(|v| v.positive) {
        assert!(v.onset.unwrap() > 90 && v.onset.unwrap() <= 100);
    }
}

#[test]
fn config_validation() {
    let mut c = SyntheticConfig::tiny();
    c.onset_window = (5, 13);
    assert!(matches!(synth_generate(&c), Err(DataError::Config(_))));
    let mut c = SyntheticConfig::tiny();
    c.visual_dim = 0;
    assert!(c.validate().is_err());
    let c: SyntheticConfig = serde_json::from_str(r#"{"positives": 2, "negatives": 1}"#).unwrap();
    assert_eq!(c.frames, 50);
    assert!(serde_json::from_str::<SyntheticConfig>(r#"{"bogus": 1}"#).is_err());
}

#[test]
fn zero_noise_global_features_separate_before_onset() {
    let c = SyntheticConfig {
        noise: 0.0,
        initial_risk: 0.0,
        positives: 20,
        negatives: 20,
        ..SyntheticConfig::easy()
    };
    let b = synth_generate(&c).unwrap();
    // Separating direction: difference of last-frame class means.
    let h = c.global_dim;
    let mean = |pos: bool| -> Vec<f64> {
        let vs: Vec<_> = b.videos.iter().filter(|v| v.positive == pos).collect();
        let mut m = vec![0.0; h];
        for v in &vs {
            for (i, x) in v.frames[c.frames - 1].global.iter().enumerate() {
                m[i] += *x as f64 / vs.len() as f64;
            }
        }
        m
    };
    let (mp, mn) = (mean(true), mean(false));
    let w: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
    let score = |g: &[f32]| g.iter().zip(&w).map(|(x, w)| *x as f64 * w).sum::<f64>();
    let neg_max = b
        .videos
        .iter()
        .filter(|v| !v.positive)
        .flat_map(|v| v.frames.iter().map(|f| score(&f.global)))
        .fold(f64::NEG_INFINITY, f64::max);
    for v in b.videos.iter().filter(|v| v.positive) {
        let a = v.onset.unwrap() as usize;
        for t in (a - 10)..=c.frames {
            assert!(score(&v.frames[t - 1].global) > neg_max, "{} frame {t}", v.id);
        }
    }
}
