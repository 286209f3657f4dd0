//! The toy model as an external segmenter speaking the stdio protocol.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use medseg_core::io::{read_frame, read_mask, write_mask};
use medseg_core::segmenter::protocol::{Request, Response, PROTOCOL_VERSION};
use medseg_core::types::{BoxPrompt, Mask2D, PointPrompt, Polarity, PromptSet};

use crate::error::{Result, ToyError};
use crate::model::ToyModel;
use crate::session::{ToyOptions, ToyTracker};

struct Session {
    scratch: PathBuf,
    tracker: ToyTracker,
    written: usize,
}

impl Session {
    fn reply_mask(&mut self, class: u32, frame: usize, mask: &Mask2D) -> medseg_core::Result<Response> {
        let name = format!("toy_c{class}_f{frame:05}_{:06}.pgm", self.written);
        self.written += 1;
        write_mask(&self.scratch.join(&name), mask)?;
        Ok(Response::mask(name))
    }
}

fn prompt_set(frame: usize, points: &[[usize; 3]], box_prompt: Option<[usize; 4]>, mask: Option<&str>) -> medseg_core::Result<PromptSet> {
    let mut ps = PromptSet::points(
        frame,
        points
            .iter()
            .map(|&[row, col, fg]| PointPrompt {
                row,
                col,
                polarity: if fg == 1 { Polarity::Foreground } else { Polarity::Background },
            })
            .collect(),
    );
    ps.box_prompt = box_prompt.map(|[row_min, col_min, row_max, col_max]| BoxPrompt { row_min, col_min, row_max, col_max });
    if let Some(path) = mask {
        ps.mask = Some(read_mask(Path::new(path))?);
    }
    Ok(ps)
}

fn handle(model: &Arc<ToyModel>, options: ToyOptions, session: &mut Option<Session>, req: Request) -> medseg_core::Result<Response> {
    let need = |s: &mut Option<Session>| -> medseg_core::Result<()> {
        if s.is_none() {
            return Err(medseg_core::Error::Protocol("request before hello".into()));
        }
        Ok(())
    };
    match req {
        Request::Hello { version, scratch, height, width, frames, .. } => {
            if version != PROTOCOL_VERSION {
                return Err(medseg_core::Error::Protocol(format!("unsupported protocol version {version}")));
            }
            *session = Some(Session {
                scratch: PathBuf::from(scratch),
                tracker: ToyTracker::new(model.clone(), options, height, width, frames),
                written: 0,
            });
            Ok(Response::hello("toy"))
        }
        Request::Prompt { class, frame, points, box_prompt, frame_file, mask } => {
            need(session)?;
            let s = session.as_mut().expect("checked");
            let ps = prompt_set(frame, &points, box_prompt, mask.as_deref())?;
            let image = read_frame(Path::new(&frame_file))?;
            let pred = s.tracker.prompt(class, &ps, &image)?;
            s.reply_mask(class, frame, &pred)
        }
        Request::Segment { class, frame, frame_file } => {
            need(session)?;
            let s = session.as_mut().expect("checked");
            let image = read_frame(Path::new(&frame_file))?;
            let pred = s.tracker.segment(class, frame, &image)?;
            s.reply_mask(class, frame, &pred)
        }
        Request::Reset { class } => {
            need(session)?;
            session.as_mut().expect("checked").tracker.reset(class);
            Ok(Response::ok())
        }
        Request::End => Ok(Response::ok()),
    }
}

/// Answers requests from `input` until `end` or end of input.
pub fn serve<R: BufRead, W: Write>(model: Arc<ToyModel>, options: ToyOptions, input: R, mut output: W) -> Result<()> {
    let io_err = |source| ToyError::Io { path: PathBuf::from("<stdio>"), source };
    let mut session = None;
    for line in input.lines() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, done) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                let done = matches!(req, Request::End);
                let resp = handle(&model, options, &mut session, req).unwrap_or_else(|e| Response::error(e.to_string()));
                (resp, done)
            }
            Err(e) => (Response::error(format!("bad request: {e}")), false),
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n").map_err(io_err)?;
        output.flush().map_err(io_err)?;
        if done {
            break;
        }
    }
    Ok(())
}
