//! Minimal external segmenter used by the protocol tests.
//!
//! Mask prompts are echoed back unchanged. Every other request is answered
//! with the frame thresholded at gray level 128.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use medseg_core::io::{read_mask, write_mask, Pnm};
use medseg_core::segmenter::protocol::{Request, Response};
use medseg_core::types::Mask2D;

fn threshold(frame_file: &str) -> medseg_core::Result<Mask2D> {
    let path = Path::new(frame_file);
    let pnm = Pnm::read(path)?;
    let c = pnm.channels;
    Mask2D::new(pnm.height, pnm.width, pnm.samples.chunks(c).map(|px| px[0] >= 128).collect())
}

fn main() {
    let stdin = std::io::stdin().lock();
    let mut stdout = std::io::stdout().lock();
    let mut scratch = PathBuf::new();
    let mut written = 0usize;
    for line in stdin.lines() {
        let Ok(line) = line else { break };
        let req: Request = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(stdout, "{}", serde_json::to_string(&Response::error(e.to_string())).unwrap());
                continue;
            }
        };
        let done = matches!(req, Request::End);
        let mut reply_mask = |mask: medseg_core::Result<Mask2D>| -> Response {
            let name = format!("echo_{written:06}.pgm");
            written += 1;
            match mask.and_then(|m| write_mask(&scratch.join(&name), &m)) {
                Ok(()) => Response::mask(name),
                Err(e) => Response::error(e.to_string()),
            }
        };
        let resp = match req {
            Request::Hello { scratch: dir, .. } => {
                scratch = PathBuf::from(dir);
                Response::hello("echo")
            }
            Request::Prompt { mask: Some(m), .. } => reply_mask(read_mask(Path::new(&m))),
            Request::Prompt { frame_file, .. } | Request::Segment { frame_file, .. } => reply_mask(threshold(&frame_file)),
            Request::Reset { .. } | Request::End => Response::ok(),
        };
        let _ = writeln!(stdout, "{}", serde_json::to_string(&resp).unwrap());
        let _ = stdout.flush();
        if done {
            break;
        }
    }
}
