use trackmark_core::bench::{reference_rows, render_report, run_benchmark, MemorySource, TABLE_COLUMNS};
use trackmark_core::fixture::SquareFixture;
use trackmark_core::segmentation::{ObjectPromptSet, SegmenterConfig, SegmenterRegistry};
use trackmark_core::{ErrorCode, Frame, ObjectId, PixelBox};

fn input() -> (Frame, Vec<ObjectPromptSet>) {
    let fx = SquareFixture::default();
    let frame = Frame { index: 0, timestamp: 0.0, pixels: fx.frame(0) };
    let b = PixelBox::new(8, 8, 32, 32, 128, 128).unwrap();
    (frame, vec![ObjectPromptSet::boxes(ObjectId::new(1).unwrap(), vec![b])])
}

// One test function: the harness allows a single run per process at a time.
#[test]
fn mock_delays_and_table() {
    let registry = SegmenterRegistry::with_defaults();
    let (frame, prompts) = input();
    let config = SegmenterConfig::named("mock")
        .with_param("init_ms", 50)
        .with_param("image_ms", 20)
        .with_param("predict_ms", 15)
        .with_param("memory_mb", 123);
    let report = run_benchmark(&registry, &config, &frame, &prompts, 5).unwrap();
    for (got, want) in [(report.model_init_ms, 50.0), (report.image_init_ms, 20.0), (report.mask_predict_ms, 15.0)] {
        assert!((got - want).abs() <= 10.0, "{got} vs {want}: {report:?}");
    }
    assert_eq!(report.peak_memory_mb, Some(123.0));
    assert_eq!(report.memory_source, MemorySource::Backend);
    assert_eq!((report.repetitions, report.warmup_runs), (5, 1));
    assert_eq!(report.statistic, "median");

    let plain = run_benchmark(&registry, &SegmenterConfig::named("region-grow"), &frame, &prompts, 3).unwrap();
    assert_ne!(plain.memory_source, MemorySource::Backend);

    let err = run_benchmark(&registry, &config, &frame, &prompts, 0).unwrap_err();
    assert_eq!(err.code(), ErrorCode::ConfigError);
    let err = run_benchmark(&registry, &SegmenterConfig::named("nope"), &frame, &prompts, 1).unwrap_err();
    assert_eq!(err.code(), ErrorCode::ConfigError);

    let mut rows = reference_rows();
    rows.push(report);
    let table = render_report(&rows).unwrap();
    assert_eq!(
        table.columns[..5],
        ["Method", "Initializing model (ms)", "Image Initialization (ms)", "Mask prediction (ms)", "VRAM (MB)"]
    );
    assert_eq!(table.columns, TABLE_COLUMNS);
    assert_eq!(table.rows[0][..6], ["FastSAM", "1357", "379", "15", "607", "box, point"]);
    assert_eq!(table.rows[1][..6], ["SAM2", "2722", "660", "50", "1476", "box, point, both"]);
    assert_eq!(table.rows[2][0], "mock");
    let text = table.to_text();
    assert!(text.starts_with("Method  | Initializing model (ms) | Image Initialization (ms)"), "{text}");
    assert_eq!(text.lines().count(), 5);
    let json: serde_json::Value = serde_json::from_str(&table.to_json()).unwrap();
    assert_eq!(json["reports"][1]["model_init_ms"], 2722.0);
}
