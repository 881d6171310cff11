use hlfr::streams::{
    equal_segments, generate, read_csv, read_drifts, save_csv, segment_of, write_drifts,
    Generator, StreamSpec,
};

fn sea() -> Generator {
    Generator::Sea {
        dim: 3,
        thresholds: vec![8.0, 9.0, 7.0, 9.5],
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = StreamSpec::new(sea(), 2000, 42).with_label_noise(0.1);
    assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    let other = generate(&spec.clone().with_seed(43)).unwrap();
    assert_ne!(generate(&spec).unwrap().samples, other.samples);
}

#[test]
fn default_drifts_split_four_ways() {
    let stream = generate(&StreamSpec::new(sea(), 4000, 1)).unwrap();
    assert_eq!(stream.drift_times, vec![1000, 2000, 3000]);
    assert_eq!(stream.samples.first().unwrap().t, 1);
    assert_eq!(stream.samples.last().unwrap().t, 4000);
    assert_eq!(equal_segments(10, 4), vec![2, 5, 7]);
    assert_eq!(segment_of(&[10, 20], 10), 0);
    assert_eq!(segment_of(&[10, 20], 11), 1);
    assert_eq!(segment_of(&[10, 20], 21), 2);
}

#[test]
fn sea_labels_follow_threshold() {
    let stream = generate(&StreamSpec::new(sea(), 4000, 2)).unwrap();
    let thresholds = [8.0, 9.0, 7.0, 9.5];
    for s in &stream.samples {
        assert_eq!(s.x.len(), 3);
        assert!(s.x.iter().all(|v| (0.0..=10.0).contains(v)));
        let theta = thresholds[stream.segment_of(s.t)];
        assert_eq!(s.y, u8::from(s.x[0] + s.x[1] <= theta));
    }
}

#[test]
fn label_noise_flips_at_requested_rate() {
    let clean = generate(&StreamSpec::new(sea(), 20_000, 3)).unwrap();
    let noisy = generate(&StreamSpec::new(sea(), 20_000, 3).with_label_noise(0.2)).unwrap();
    let thresholds = [8.0, 9.0, 7.0, 9.5];
    let flipped = noisy
        .samples
        .iter()
        .filter(|s| s.y != u8::from(s.x[0] + s.x[1] <= thresholds[noisy.segment_of(s.t)]))
        .count() as f64
        / 20_000.0;
    assert!((flipped - 0.2).abs() < 0.015, "{flipped}");
    assert_eq!(clean.samples.len(), noisy.samples.len());
}

#[test]
fn imbalance_sets_class_prior() {
    let spec = StreamSpec::new(sea(), 8000, 4).with_imbalance(vec![0.1, 0.5]);
    let stream = generate(&spec).unwrap();
    for (seg, prior) in [(0, 0.1), (1, 0.5), (2, 0.1), (3, 0.5)] {
        let seg_samples: Vec<_> = stream.samples.iter().filter(|s| stream.segment_of(s.t) == seg).collect();
        let pos = seg_samples.iter().filter(|s| s.y == 1).count() as f64 / seg_samples.len() as f64;
        assert!((pos - prior).abs() < 0.04, "segment {seg}: {pos}");
    }
}

#[test]
fn every_generator_produces_binary_labels() {
    for g in ["sea", "checkerboard", "hyperplane", "highdim"] {
        let generator: Generator = g.parse().unwrap();
        let stream = generate(&StreamSpec::new(generator, 1200, 5)).unwrap();
        assert_eq!(stream.samples.len(), 1200);
        let d = stream.dim().unwrap();
        assert!(stream.samples.iter().all(|s| s.y <= 1 && s.x.len() == d));
        let pos = stream.samples.iter().filter(|s| s.y == 1).count();
        assert!(pos > 0 && pos < 1200, "{g} is single-class");
    }
    assert!("nope".parse::<Generator>().is_err());
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(generate(&StreamSpec::new(sea(), 100, 1).with_drifts(vec![50, 40])).is_err());
    assert!(generate(&StreamSpec::new(sea(), 100, 1).with_drifts(vec![100])).is_err());
    assert!(generate(&StreamSpec::new(sea(), 100, 1).with_label_noise(1.5)).is_err());
    assert!(generate(&StreamSpec::new(sea(), 100, 1).with_imbalance(vec![1.0])).is_err());
}

#[test]
fn csv_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let stream = generate(&StreamSpec::new(sea(), 300, 6)).unwrap();
    let path = dir.path().join("s.csv");
    save_csv(&path, &stream.samples).unwrap();
    assert_eq!(read_csv(&path).unwrap(), stream.samples);

    let drifts = dir.path().join("d.txt");
    write_drifts(&drifts, &stream.drift_times).unwrap();
    assert_eq!(read_drifts(&drifts).unwrap(), stream.drift_times);

    let csv_spec = StreamSpec::new(
        Generator::Csv {
            path: path.clone(),
            drifts: Some(drifts),
        },
        0,
        0,
    );
    let back = generate(&csv_spec).unwrap();
    assert_eq!(back, stream);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "f1,f2,label\n0.1,0.2,1\n0.3,0.4,2\n").unwrap();
    let err = read_csv(&bad).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
    std::fs::write(&bad, "f1,f2,label\n0.1,0.2,1\n0.3,1\n").unwrap();
    assert!(read_csv(&bad).is_err());
}
