use cifst_core::data::{
    self, filter_pair, generate_corpus, load_manifest, write_manifest, DataError, SyntheticSpec,
    Vocab,
};

fn small() -> SyntheticSpec {
    SyntheticSpec {
        n_train: 6,
        n_dev: 2,
        n_test: 2,
        ..SyntheticSpec::default()
    }
}

#[test]
fn manifest_round_trip_with_files_and_inline() {
    let corpus = generate_corpus(&small());
    let dir = tempfile::tempdir().unwrap();
    for inline in [false, true] {
        let path = dir
            .path()
            .join(if inline { "inline.tsv" } else { "files.tsv" });
        write_manifest(&path, &corpus.train, corpus.vocab(), inline).unwrap();
        let loaded: Vec<_> = load_manifest(&path, corpus.vocab())
            .unwrap()
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(loaded.len(), corpus.train.len());
        for (a, b) in loaded.iter().zip(&corpus.train) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.transcript, b.transcript);
            assert_eq!(a.translation, b.translation);
        }
    }
}

#[test]
fn empty_manifest_is_an_empty_stream() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.tsv");
    std::fs::write(&path, "").unwrap();
    assert_eq!(load_manifest(&path, Vocab::new(50)).unwrap().count(), 0);
}

#[test]
fn three_field_line_reports_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tsv");
    std::fs::write(&path, "# frame_ms=40\n\nutt1\thex:0000000000000000\tw4\n").unwrap();
    let err = load_manifest(&path, Vocab::new(50))
        .unwrap()
        .next()
        .unwrap()
        .unwrap_err();
    match err {
        DataError::Malformed { line, .. } => assert_eq!(line, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn missing_frames_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tsv");
    std::fs::write(&path, "# frame_ms=40\nutt1\tframes/nope.bin\tw4\tw5\n").unwrap();
    let err = load_manifest(&path, Vocab::new(50))
        .unwrap()
        .next()
        .unwrap()
        .unwrap_err();
    assert!(matches!(err, DataError::MissingFrames { .. }));
    assert!(err.to_string().contains("nope.bin"), "{err}");
}

#[test]
fn unknown_token_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.tsv");
    std::fs::write(
        &path,
        "# frame_ms=40\nutt1\thex:0000000000000000\tw4 w99\tw5\n",
    )
    .unwrap();
    let err = load_manifest(&path, Vocab::new(50))
        .unwrap()
        .next()
        .unwrap()
        .unwrap_err();
    assert!(
        matches!(err, DataError::Malformed { line: 2, .. }),
        "{err:?}"
    );
}

#[test]
fn filtering_is_idempotent() {
    let pairs: Vec<(usize, usize)> = (1..40).flat_map(|s| (1..40).map(move |t| (s, t))).collect();
    let once: Vec<_> = pairs
        .iter()
        .copied()
        .filter(|&(s, t)| filter_pair(s, t))
        .collect();
    let twice: Vec<_> = once
        .iter()
        .copied()
        .filter(|&(s, t)| filter_pair(s, t))
        .collect();
    assert_eq!(once, twice);
    assert!(once.iter().all(|&(s, t)| 3 * s >= 2 * t && 2 * s <= 3 * t));
}

#[test]
fn generation_is_byte_identical_across_runs() {
    let a = generate_corpus(&small());
    let b = generate_corpus(&small());
    let bytes = |c: &data::Corpus| {
        c.train
            .iter()
            .map(|u| data::encode_frames(&u.frames))
            .collect::<Vec<_>>()
    };
    assert_eq!(bytes(&a), bytes(&b));
}

#[test]
fn every_generated_pair_survives_filtering() {
    let corpus = generate_corpus(&small());
    assert!(corpus
        .train
        .iter()
        .all(|u| filter_pair(u.transcript.len(), u.translation.len())));
}
