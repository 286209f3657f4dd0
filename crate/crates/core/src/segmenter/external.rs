//! Client side of the stdio segmenter protocol.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::protocol::{Request, Response, PROTOCOL_VERSION};
use super::Segmenter;
use crate::error::{Error, Result};
use crate::io::pnm::{read_mask, write_frame, write_mask};
use crate::types::{Case, Mask2D, PromptSet};

pub const DEFAULT_HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(600);
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(10);

/// Environment variable overriding where per-session scratch directories live.
pub const SCRATCH_ENV: &str = "MEDSEG_SCRATCH";

const STDERR_KEEP: usize = 8 * 1024;
const STDERR_DRAIN: Duration = Duration::from_millis(500);

/// Splits a command line into words, honouring single quotes, double quotes
/// and backslash escapes. No variable or glob expansion.
pub fn split_command(cmd: &str) -> Result<Vec<String>> {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut in_word = false;
    let mut chars = cmd.chars();
    while let Some(ch) = chars.next() {
        match ch {
            '\'' => {
                in_word = true;
                loop {
                    match chars.next() {
                        Some('\'') => break,
                        Some(c) => cur.push(c),
                        None => return Err(Error::Launch(format!("unterminated quote in {cmd:?}"))),
                    }
                }
            }
            '"' => {
                in_word = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(c) => cur.push(c),
                            None => return Err(Error::Launch(format!("dangling escape in {cmd:?}"))),
                        },
                        Some(c) => cur.push(c),
                        None => return Err(Error::Launch(format!("unterminated quote in {cmd:?}"))),
                    }
                }
            }
            '\\' => {
                in_word = true;
                match chars.next() {
                    Some(c) => cur.push(c),
                    None => return Err(Error::Launch(format!("dangling escape in {cmd:?}"))),
                }
            }
            c if c.is_whitespace() => {
                if in_word {
                    words.push(std::mem::take(&mut cur));
                    in_word = false;
                }
            }
            c => {
                in_word = true;
                cur.push(c);
            }
        }
    }
    if in_word {
        words.push(cur);
    }
    if words.is_empty() {
        return Err(Error::Launch("empty segmenter command".into()));
    }
    Ok(words)
}

pub struct ExternalOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
    /// Parent directory for the session scratch directory.
    pub scratch_root: Option<PathBuf>,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        Self {
            handshake_timeout: DEFAULT_HANDSHAKE_TIMEOUT,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
            scratch_root: std::env::var_os(SCRATCH_ENV).map(PathBuf::from),
        }
    }
}

/// A segmenter running as a child process.
pub struct ExternalSegmenter<'a> {
    case: &'a Case,
    name: String,
    child: Option<Child>,
    stdin: Option<ChildStdin>,
    lines: Option<Receiver<std::io::Result<String>>>,
    stderr_tail: Arc<Mutex<Vec<u8>>>,
    stderr_done: Receiver<()>,
    scratch: Option<tempfile::TempDir>,
    written_frames: HashSet<usize>,
    request_timeout: Duration,
    closed: bool,
}

impl<'a> ExternalSegmenter<'a> {
    pub fn launch(command: &str, case: &'a Case, options: ExternalOptions) -> Result<Self> {
        let words = split_command(command)?;
        let scratch = match &options.scratch_root {
            Some(root) => {
                std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
                tempfile::Builder::new().prefix("medseg-").tempdir_in(root)
            }
            None => tempfile::Builder::new().prefix("medseg-").tempdir(),
        }
        .map_err(|e| Error::Launch(format!("cannot create scratch directory: {e}")))?;

        let mut child = Command::new(&words[0])
            .args(&words[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Launch(format!("{}: {e}", words[0])))?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let stderr_tail = Arc::new(Mutex::new(Vec::new()));
        let mut stderr = child.stderr.take().expect("piped stderr");
        let tail = Arc::clone(&stderr_tail);
        let (done_tx, stderr_done) = mpsc::channel();
        std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut t = tail.lock().expect("stderr buffer poisoned");
                t.extend_from_slice(&buf[..n]);
                let excess = t.len().saturating_sub(STDERR_KEEP);
                t.drain(..excess);
            }
            let _ = done_tx.send(());
        });

        let stdin = child.stdin.take();
        let mut session = Self {
            case,
            name: words[0].clone(),
            child: Some(child),
            stdin,
            lines: Some(rx),
            stderr_tail,
            stderr_done,
            scratch: Some(scratch),
            written_frames: HashSet::new(),
            request_timeout: options.request_timeout,
            closed: false,
        };
        let meta = case.meta();
        let hello = Request::Hello {
            version: PROTOCOL_VERSION,
            scratch: session.scratch_dir().display().to_string(),
            height: meta.height,
            width: meta.width,
            frames: meta.frames,
            classes: meta.classes,
        };
        match session.request(&hello, options.handshake_timeout) {
            Ok(resp) => {
                if let Some(name) = resp.name {
                    session.name = name;
                }
                Ok(session)
            }
            Err(e) => {
                session.kill();
                let _ = session.stderr_done.recv_timeout(STDERR_DRAIN);
                let diag = session.diagnostics();
                Err(match e {
                    Error::Protocol(m) => Error::Protocol(format!("handshake: {m}{diag}")),
                    other => Error::Launch(format!("handshake failed: {other}{diag}")),
                })
            }
        }
    }

    pub fn scratch_dir(&self) -> &Path {
        self.scratch.as_ref().expect("scratch lives until end").path()
    }

    fn diagnostics(&self) -> String {
        let tail = self.stderr_tail.lock().map(|t| t.clone()).unwrap_or_default();
        if tail.is_empty() {
            String::new()
        } else {
            format!("; stderr: {}", String::from_utf8_lossy(&tail).trim())
        }
    }

    fn request(&mut self, req: &Request, timeout: Duration) -> Result<Response> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let mut line = serde_json::to_string(req)?;
        line.push('\n');
        let stdin = self.stdin.as_mut().ok_or(Error::SessionClosed)?;
        if stdin.write_all(line.as_bytes()).and_then(|_| stdin.flush()).is_err() {
            self.closed = true;
            return Err(Error::SessionClosed);
        }
        let rx = self.lines.as_ref().ok_or(Error::SessionClosed)?;
        let reply = match rx.recv_timeout(timeout) {
            Ok(Ok(reply)) => reply,
            Ok(Err(e)) => {
                self.closed = true;
                return Err(Error::Protocol(format!("reading reply: {e}")));
            }
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                return Err(Error::Protocol(format!("no reply within {:.1} s", timeout.as_secs_f64())));
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.closed = true;
                return Err(Error::SessionClosed);
            }
        };
        let resp: Response = serde_json::from_str(&reply)
            .map_err(|e| Error::Protocol(format!("malformed reply {reply:?}: {e}")))?;
        if !resp.ok {
            return Err(Error::Segmenter(resp.error.unwrap_or_else(|| "unspecified error".into())));
        }
        Ok(resp)
    }

    fn frame_file(&mut self, index: usize) -> Result<String> {
        let frame = self.case.frames.get(index).ok_or(Error::FrameOutOfRange {
            index,
            count: self.case.frames.len(),
        })?;
        let ext = if frame.channels() == 3 { "ppm" } else { "pgm" };
        let path = self.scratch_dir().join(format!("frame_{index:05}.{ext}"));
        if self.written_frames.insert(index) {
            write_frame(&path, frame)?;
        }
        Ok(path.display().to_string())
    }

    fn read_reply_mask(&self, resp: Response) -> Result<Mask2D> {
        let rel = resp
            .mask
            .ok_or_else(|| Error::Protocol("reply carries no mask path".into()))?;
        let path = self.scratch_dir().join(rel);
        let mask = read_mask(&path)?;
        if mask.height() != self.case.height() || mask.width() != self.case.width() {
            return Err(Error::Protocol(format!(
                "mask {} is {}x{}, expected {}x{}",
                path.display(),
                mask.height(),
                mask.width(),
                self.case.height(),
                self.case.width()
            )));
        }
        Ok(mask)
    }

    fn kill(&mut self) {
        self.closed = true;
        self.stdin = None;
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
        self.scratch = None;
    }
}

impl Segmenter for ExternalSegmenter<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn add_prompts(&mut self, class_id: u32, prompts: &PromptSet) -> Result<Mask2D> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        prompts.validate(self.case.height(), self.case.width())?;
        let frame_file = self.frame_file(prompts.frame_index)?;
        let mask_file = match &prompts.mask {
            Some(m) => {
                let path = self
                    .scratch_dir()
                    .join(format!("prompt_mask_c{class_id}_f{:05}.pgm", prompts.frame_index));
                write_mask(&path, m)?;
                Some(path.display().to_string())
            }
            None => None,
        };
        let req = Request::prompt(class_id, prompts, frame_file, mask_file);
        let resp = self.request(&req, self.request_timeout)?;
        self.read_reply_mask(resp)
    }

    fn segment_frame(&mut self, class_id: u32, frame_index: usize) -> Result<Mask2D> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let frame_file = self.frame_file(frame_index)?;
        let req = Request::Segment {
            class: class_id,
            frame: frame_index,
            frame_file,
        };
        let resp = self.request(&req, self.request_timeout)?;
        self.read_reply_mask(resp)
    }

    fn reset_to_prompt_state(&mut self, class_id: u32) -> Result<()> {
        self.request(&Request::Reset { class: class_id }, self.request_timeout)?;
        Ok(())
    }

    fn end(&mut self) -> Result<()> {
        if self.child.is_none() {
            return Ok(());
        }
        if !self.closed {
            if let Err(e) = self.request(&Request::End, SHUTDOWN_GRACE) {
                log::warn!("segmenter {}: end not acknowledged: {e}", self.name);
            }
        }
        self.stdin = None;
        self.closed = true;
        if let Some(mut child) = self.child.take() {
            match child.wait_timeout(SHUTDOWN_GRACE) {
                Ok(Some(status)) if status.success() => {}
                Ok(Some(status)) => {
                    log::warn!("segmenter {} exited uncleanly: {status}{}", self.name, self.diagnostics())
                }
                Ok(None) | Err(_) => {
                    log::warn!("segmenter {} did not exit within {:?}; killing it", self.name, SHUTDOWN_GRACE);
                    let _ = child.kill();
                    let _ = child.wait();
                }
            }
        }
        if let Some(dir) = self.scratch.take() {
            if let Err(e) = dir.close() {
                log::warn!("removing scratch directory: {e}");
            }
        }
        Ok(())
    }
}

impl Drop for ExternalSegmenter<'_> {
    fn drop(&mut self) {
        let _ = self.end();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_command_handles_quotes() {
        assert_eq!(split_command("a b  c").unwrap(), vec!["a", "b", "c"]);
        assert_eq!(
            split_command(r#"prog --ckpt "my file.bin" 'x y' z\ w"#).unwrap(),
            vec!["prog", "--ckpt", "my file.bin", "x y", "z w"]
        );
        assert_eq!(split_command(r#"a """#).unwrap(), vec!["a", ""]);
        assert!(split_command("  ").is_err());
        assert!(split_command("a 'b").is_err());
    }
}
