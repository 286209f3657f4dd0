use std::io::Cursor;
use std::sync::Arc;

use medseg_core::io::{read_frame, read_mask, write_frame, write_mask};
use medseg_core::io::synth::{synthesize, SynthKind, SyntheticSpec};
use medseg_core::pipelines::{eval_video, EvalConfig};
use medseg_core::segmenter::protocol::{Request, Response};
use medseg_core::segmenter::{SegmenterFactory, SegmenterKind, SegmenterSpec};
use medseg_core::types::{BoxPrompt, Mask2D, PointPrompt, PromptSet};
use medseg_toy::checkpoint;
use medseg_toy::serve::serve;
use medseg_toy::{ToyConfig, ToyFactory, ToyModel, ToyOptions, ToyTracker};

fn quantized_model(seed: u64) -> ToyModel {
    let mut m = ToyModel::new(ToyConfig::default(), seed).unwrap();
    checkpoint::quantize(&mut m);
    m
}

fn lines(reqs: &[Request]) -> String {
    reqs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect()
}

#[test]
fn served_masks_equal_in_process_masks() {
    let dir = tempfile::tempdir().unwrap();
    let case = &synthesize(&SyntheticSpec::new(SynthKind::MovingSquare, 1, 5, 32, 40, 8)).unwrap()[0];
    let mut frames = Vec::new();
    for (i, f) in case.frames.iter().enumerate() {
        let p = dir.path().join(format!("frame{i}.pgm"));
        write_frame(&p, f).unwrap();
        frames.push((p.to_string_lossy().into_owned(), read_frame(&p).unwrap()));
    }
    let gt = case.gt_mask(2, 1).unwrap();
    let mask_path = dir.path().join("prompt.pgm");
    write_mask(&mask_path, &gt).unwrap();
    let mut ps = PromptSet::points(1, vec![PointPrompt::foreground(5, 6), PointPrompt { polarity: medseg_core::types::Polarity::Background, ..PointPrompt::foreground(30, 39) }]);
    ps.box_prompt = Some(BoxPrompt { row_min: 2, col_min: 3, row_max: 20, col_max: 25 });
    let reqs = vec![
        Request::Hello { version: 1, scratch: dir.path().to_string_lossy().into_owned(), height: 32, width: 40, frames: 5, classes: vec![1] },
        Request::prompt(1, &ps, frames[1].0.clone(), None),
        Request::Segment { class: 1, frame: 2, frame_file: frames[2].0.clone() },
        Request::Segment { class: 1, frame: 3, frame_file: frames[3].0.clone() },
        Request::Reset { class: 1 },
        Request::prompt(1, &PromptSet::mask(2, gt.clone()), frames[2].0.clone(), Some(mask_path.to_string_lossy().into_owned())),
        Request::Segment { class: 1, frame: 4, frame_file: frames[4].0.clone() },
        Request::Segment { class: 1, frame: 0, frame_file: frames[0].0.clone() },
        Request::End,
    ];
    let model = Arc::new(quantized_model(8));
    let mut out = Vec::new();
    serve(model.clone(), ToyOptions::default(), Cursor::new(lines(&reqs)), &mut out).unwrap();
    let replies: Vec<Response> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies.len(), reqs.len());
    assert_eq!(replies[0], Response::hello("toy"));

    let mut tracker = ToyTracker::new(model, ToyOptions::default(), 32, 40, 5);
    let expected: Vec<Option<Mask2D>> = vec![
        None,
        Some(tracker.prompt(1, &ps, &frames[1].1).unwrap()),
        Some(tracker.segment(1, 2, &frames[2].1).unwrap()),
        Some(tracker.segment(1, 3, &frames[3].1).unwrap()),
        {
            tracker.reset(1);
            None
        },
        Some(tracker.prompt(1, &PromptSet::mask(2, gt.clone()), &frames[2].1).unwrap()),
        Some(tracker.segment(1, 4, &frames[4].1).unwrap()),
        Some(tracker.segment(1, 0, &frames[0].1).unwrap()),
        None,
    ];
    for (reply, want) in replies.iter().zip(&expected) {
        assert!(reply.ok, "{reply:?}");
        match want {
            Some(mask) => {
                let name = reply.mask.as_ref().unwrap();
                assert!(!name.contains('/'));
                assert_eq!(&read_mask(&dir.path().join(name)).unwrap(), mask);
            }
            None => assert!(reply.mask.is_none()),
        }
    }
    assert_eq!(expected[5].as_ref(), Some(&gt));
}

#[test]
fn server_reports_errors_and_keeps_going() {
    let model = Arc::new(quantized_model(1));
    let input = [
        r#"{"cmd":"segment","class":1,"frame":0,"frame_file":"/nope.pgm"}"#,
        "not json",
        r#"{"cmd":"hello","version":9,"scratch":"/tmp","height":8,"width":8,"frames":1,"classes":[1]}"#,
        r#"{"cmd":"hello","version":1,"scratch":"/tmp","height":8,"width":8,"frames":1,"classes":[1]}"#,
        r#"{"cmd":"segment","class":1,"frame":0,"frame_file":"/definitely/missing.pgm"}"#,
        r#"{"cmd":"end"}"#,
        r#"{"cmd":"end"}"#,
    ]
    .join("\n");
    let mut out = Vec::new();
    serve(model, ToyOptions::default(), Cursor::new(input), &mut out).unwrap();
    let replies: Vec<Response> = String::from_utf8(out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ok: Vec<bool> = replies.iter().map(|r| r.ok).collect();
    assert_eq!(ok, [false, false, false, true, false, true]);
    assert!(replies[0].error.as_ref().unwrap().contains("before hello"));
}

#[test]
fn factory_runs_toy_sessions_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("toy.ckpt");
    let model = quantized_model(6);
    checkpoint::save(&model, 6, &ckpt).unwrap();
    let cases = synthesize(&SyntheticSpec::new(SynthKind::MovingSquare, 2, 4, 24, 24, 6)).unwrap();
    let spec = SegmenterSpec::new(SegmenterKind::Builtin("toy".into())).with_option("ckpt", ckpt.to_string_lossy());
    let factory = ToyFactory::new();
    let cfg = EvalConfig { seed: 6, ..Default::default() };
    let a = eval_video(&cases, &spec, &cfg, &factory).unwrap();
    let b = eval_video(&cases, &spec, &cfg, &ToyFactory::with_model(model)).unwrap();
    let strip = |rows: Vec<medseg_core::io::ResultRow>| rows.into_iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    let (a, b) = (strip(a), strip(b));
    assert!(!a.is_empty());
    assert!(a.iter().all(|r| r.segmenter == "toy"));
    let spec_mem = SegmenterSpec::new(SegmenterKind::Builtin("toy".into()));
    assert_eq!(a, strip(eval_video(&cases, &spec_mem.clone().with_option("ckpt", ckpt.to_string_lossy()), &cfg, &factory).unwrap()));
    assert_eq!(a, b);
    let oracle = SegmenterSpec::parse("builtin:oracle").unwrap();
    assert!(factory.begin(&oracle, &cases[0]).is_ok());
    let unknown = SegmenterSpec::parse("builtin:nope").unwrap();
    assert!(factory.begin(&unknown, &cases[0]).is_err());
    let bad = spec_mem.with_option("memory", "maybe");
    assert!(factory.begin(&bad, &cases[0]).is_err());
}
