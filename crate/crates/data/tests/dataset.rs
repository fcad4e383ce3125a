use gwtrack_data::preset::{generate_one, test_indices};
use gwtrack_data::{generate, read_all, read_dataset, write_dataset, DataError, Split, SynthConfig};

#[test]
fn write_read_round_trip_is_lossless() {
    let cfg = SynthConfig::tiny(5, 2, 6);
    let seqs = generate(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for s in &seqs {
        write_dataset(&s.dataset, dir.path()).unwrap();
    }
    let back = read_all(dir.path()).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in seqs.iter().zip(&back) {
        assert_eq!(a.dataset.meta, b.meta);
        assert_eq!(a.dataset.annotations, b.annotations);
        assert_eq!(a.dataset.frames.len(), b.frames.len());
        for (fa, fb) in a.dataset.frames.iter().zip(&b.frames) {
            assert_eq!(fa.as_raw(), fb.as_raw());
        }
    }
}

#[test]
fn missing_meta_is_an_error() {
    let cfg = SynthConfig::tiny(5, 2, 3);
    let s = generate_one(&cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&s.dataset, dir.path()).unwrap();
    let seq_dir = dir.path().join(s.dataset.id());
    std::fs::remove_file(seq_dir.join("meta.txt")).unwrap();
    assert!(matches!(read_dataset(&seq_dir), Err(DataError::MissingMeta(_))));
}

#[test]
fn malformed_annotation_names_line() {
    let cfg = SynthConfig::tiny(5, 2, 3);
    let s = generate_one(&cfg, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&s.dataset, dir.path()).unwrap();
    let ann = dir.path().join(s.dataset.id()).join("annotations.jsonl");
    let text = std::fs::read_to_string(&ann).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1] = "{\"frame\":1,\"cx\":\"oops\"}";
    std::fs::write(&ann, lines.join("\n")).unwrap();
    match read_dataset(&dir.path().join(s.dataset.id())) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("unexpected {:?}", other.map(|d| d.len())),
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = SynthConfig::tiny(11, 2, 4);
    let a = generate_one(&cfg, 1).unwrap();
    let b = generate_one(&cfg, 1).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.tip_positions, b.tip_positions);
    let other = generate_one(&SynthConfig::tiny(12, 2, 4), 1).unwrap();
    assert_ne!(a.dataset.frames, other.dataset.frames);
}

#[test]
fn paper_split_counts() {
    let cfg = SynthConfig::paper_split(0);
    assert_eq!(cfg.num_sequences(), 15);
    assert_eq!(cfg.train_frames.len(), 12);
    assert_eq!(cfg.test_frames.len(), 3);
    assert_eq!(cfg.train_frames.iter().sum::<usize>(), 1078);
    assert_eq!(cfg.test_frames.iter().sum::<usize>(), 269);
    assert_eq!(test_indices(&cfg).len(), 3);
}

#[test]
fn split_labels_follow_test_indices() {
    let cfg = SynthConfig::tiny(21, 5, 2);
    let tests = test_indices(&cfg);
    for i in 0..5 {
        let s = generate_one(&cfg, i).unwrap();
        let want = if tests.contains(&i) { Split::Test } else { Split::Train };
        assert_eq!(s.dataset.meta.split, want);
        for a in &s.dataset.annotations {
            assert!(a.bbox.within(256.0, 256.0));
        }
    }
}
