//! Line-delimited JSON messages exchanged with external segmenters over stdio.
//!
//! Requests (harness → segmenter), one JSON object per line:
//!
//! ```text
//! {"cmd":"hello","version":1,"scratch":"<dir>","height":H,"width":W,"frames":T,"classes":[...]}
//! {"cmd":"prompt","class":c,"frame":i,"points":[[row,col,1|0],...],"box":[r0,c0,r1,c1]|null,"frame_file":"<path.pgm>"}
//! {"cmd":"segment","class":c,"frame":i,"frame_file":"<path.pgm>"}
//! {"cmd":"reset","class":c}
//! {"cmd":"end"}
//! ```
//!
//! A prompt may carry an extra `"mask":"<path.pgm>"` key for dense mask prompts.
//! Every request gets exactly one response line: `{"ok":true,...}` with
//! `name` (hello) or `mask` (prompt, segment), or `{"ok":false,"error":"<msg>"}`.

use serde::{Deserialize, Serialize};

use crate::types::{Polarity, PromptSet};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase")]
pub enum Request {
    Hello {
        version: u32,
        scratch: String,
        height: usize,
        width: usize,
        frames: usize,
        classes: Vec<u32>,
    },
    Prompt {
        class: u32,
        frame: usize,
        /// `[row, col, 1]` for foreground, `[row, col, 0]` for background.
        points: Vec<[usize; 3]>,
        #[serde(rename = "box")]
        box_prompt: Option<[usize; 4]>,
        frame_file: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask: Option<String>,
    },
    Segment {
        class: u32,
        frame: usize,
        frame_file: String,
    },
    Reset {
        class: u32,
    },
    End,
}

impl Request {
    /// Prompt message for `prompts`; `mask` is the path of an already written mask prompt.
    pub fn prompt(class: u32, prompts: &PromptSet, frame_file: String, mask: Option<String>) -> Self {
        Request::Prompt {
            class,
            frame: prompts.frame_index,
            points: prompts
                .points
                .iter()
                .map(|p| [p.row, p.col, (p.polarity == Polarity::Foreground) as usize])
                .collect(),
            box_prompt: prompts.box_prompt.map(|b| [b.row_min, b.col_min, b.row_max, b.col_max]),
            frame_file,
            mask,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok() -> Self {
        Self { ok: true, ..Default::default() }
    }

    pub fn hello(name: impl Into<String>) -> Self {
        Self { ok: true, name: Some(name.into()), ..Default::default() }
    }

    pub fn mask(path: impl Into<String>) -> Self {
        Self { ok: true, mask: Some(path.into()), ..Default::default() }
    }

    pub fn error(message: impl Into<String>) -> Self {
        Self { ok: false, error: Some(message.into()), ..Default::default() }
    }
}
