use std::time::Duration;

use medseg_core::io::synth::{synthesize, SynthKind, SyntheticSpec};
use medseg_core::segmenter::{ExternalOptions, ExternalSegmenter, Segmenter};
use medseg_core::types::{Case, PointPrompt, PromptSet};
use medseg_core::Error;

const HELLO_OK: &str = r#"read l; echo '{"ok":true,"name":"script"}'"#;

fn case() -> Case {
    synthesize(&SyntheticSpec::new(SynthKind::MovingSquare, 1, 3, 16, 16, 0)).unwrap().remove(0)
}

fn options() -> ExternalOptions {
    ExternalOptions { handshake_timeout: Duration::from_secs(10), request_timeout: Duration::from_secs(10), scratch_root: None }
}

fn sh(script: &str) -> String {
    format!("sh -c '{}'", script.replace('\'', r"'\''"))
}

fn launch<'a>(script: &str, case: &'a Case) -> medseg_core::Result<ExternalSegmenter<'a>> {
    ExternalSegmenter::launch(&sh(script), case, options())
}

fn click() -> PromptSet {
    PromptSet::points(0, vec![PointPrompt::foreground(8, 8)])
}

#[test]
fn missing_program_is_a_launch_error() {
    let c = case();
    let err = ExternalSegmenter::launch("/nonexistent/segmenter --flag", &c, options()).err().unwrap();
    assert!(matches!(err, Error::Launch(_)), "{err}");
}

#[test]
fn handshake_failures_carry_diagnostics() {
    let c = case();
    let err = launch("echo boom >&2; exit 3", &c).err().unwrap();
    assert!(matches!(&err, Error::Launch(m) if m.contains("boom")), "{err}");

    let err = launch(r#"read l; echo '{"ok":false,"error":"nope"}'"#, &c).err().unwrap();
    assert!(matches!(&err, Error::Launch(m) if m.contains("nope")), "{err}");

    let err = launch("read l; echo garbage", &c).err().unwrap();
    assert!(matches!(&err, Error::Protocol(m) if m.contains("garbage")), "{err}");
}

#[test]
fn handshake_times_out() {
    let c = case();
    let opts = ExternalOptions { handshake_timeout: Duration::from_millis(200), ..options() };
    let err = ExternalSegmenter::launch(&sh("read l; sleep 5"), &c, opts).err().unwrap();
    assert!(matches!(&err, Error::Protocol(m) if m.contains("no reply")), "{err}");
}

#[test]
fn name_comes_from_the_handshake() {
    let c = case();
    let mut s = launch(&format!("{HELLO_OK}; read l; echo '{{\"ok\":true}}'"), &c).unwrap();
    assert_eq!(s.name(), "script");
    s.end().unwrap();
}

#[test]
fn error_replies_become_segmenter_errors() {
    let c = case();
    let mut s = launch(&format!(r#"{HELLO_OK}; read l; echo '{{"ok":false,"error":"bad frame"}}'; read l"#), &c).unwrap();
    let err = s.add_prompts(1, &click()).unwrap_err();
    assert!(matches!(&err, Error::Segmenter(m) if m == "bad frame"), "{err}");
}

#[test]
fn reply_without_mask_or_with_wrong_shape_is_a_protocol_error() {
    let c = case();
    let mut s = launch(&format!(r#"{HELLO_OK}; read l; echo '{{"ok":true}}'; read l"#), &c).unwrap();
    assert!(matches!(s.add_prompts(1, &click()), Err(Error::Protocol(_))));

    let tiny_mask = r#"read l; d=$(echo "$l" | sed 's/.*"scratch":"\([^"]*\)".*/\1/'); printf 'P5\n1 1\n255\n\377' > "$d/m.pgm"; echo '{"ok":true,"name":"x"}'; read l; echo '{"ok":true,"mask":"m.pgm"}'; read l"#;
    let mut s = launch(tiny_mask, &c).unwrap();
    let err = s.add_prompts(1, &click()).unwrap_err();
    assert!(matches!(&err, Error::Protocol(m) if m.contains("1x1")), "{err}");
}

#[test]
fn a_dead_child_closes_the_session() {
    let c = case();
    let mut s = launch(HELLO_OK, &c).unwrap();
    std::thread::sleep(Duration::from_millis(100));
    let err = s.add_prompts(1, &click()).unwrap_err();
    assert!(matches!(err, Error::SessionClosed | Error::Protocol(_)), "{err}");
    assert!(s.segment_frame(1, 1).is_err());
}

#[test]
fn request_timeout_kills_the_child() {
    let c = case();
    let opts = ExternalOptions { request_timeout: Duration::from_millis(200), ..options() };
    let mut s = ExternalSegmenter::launch(&sh(&format!("{HELLO_OK}; read l; sleep 5")), &c, opts).unwrap();
    let err = s.add_prompts(1, &click()).unwrap_err();
    assert!(matches!(&err, Error::Protocol(m) if m.contains("no reply")), "{err}");
    assert!(matches!(s.segment_frame(1, 1), Err(Error::SessionClosed)));
}

#[test]
fn scratch_root_is_honoured_and_cleaned() {
    let c = case();
    let root = tempfile::tempdir().unwrap();
    let opts = ExternalOptions { scratch_root: Some(root.path().join("nested")), ..options() };
    let mut s = ExternalSegmenter::launch(&sh(&format!("{HELLO_OK}; read l; echo '{{\"ok\":true}}'")), &c, opts).unwrap();
    assert!(s.scratch_dir().starts_with(root.path().join("nested")));
    s.end().unwrap();
    drop(s);
    assert_eq!(std::fs::read_dir(root.path().join("nested")).unwrap().count(), 0);
}
