use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use resincarve_core::evaluation::{evaluate_items, grade_region, EvalItem, EvalReport};
use resincarve_core::gcode::MachineConfig;
use resincarve_core::imaging::{decode_png, encode_png, BinaryMask, RasterImage};
use resincarve_core::pipeline::{compile_mask, segment_image, CompiledProgram, PipelineConfig, SegmentStage, StageError};
use resincarve_core::prompts::PromptSpec;
use resincarve_core::segmentation::binarize;
use resincarve_core::Error;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

/// One image under interactive refinement. The state is always the result of
/// replaying `history` over the image with `config`.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub image: RasterImage,
    pub config: PipelineConfig,
    pub history: Vec<PromptSpec>,
    pub state: SegmentStage,
}

impl Session {
    pub fn create(id: String, image: RasterImage, config: PipelineConfig) -> Result<Self, StageError> {
        Self::replay(id, image, config, Vec::new())
    }

    pub fn replay(
        id: String,
        image: RasterImage,
        config: PipelineConfig,
        history: Vec<PromptSpec>,
    ) -> Result<Self, StageError> {
        let state = segment_image(&image, &config, &history)?;
        Ok(Self { id, image, config, history, state })
    }

    pub fn final_mask(&self) -> &BinaryMask {
        &self.state.result.final_mask
    }

    /// Appends a prompt and re-runs the backend. Returns the change in retained
    /// pixel count. The session is unchanged on error.
    pub fn add_prompt(&mut self, spec: PromptSpec) -> Result<i64, StageError> {
        let mut history = self.history.clone();
        history.push(spec);
        self.rerun(history)
    }

    /// Removes the `index`-th operator prompt. `None` if there is no such prompt.
    pub fn remove_prompt(&mut self, index: usize) -> Option<Result<i64, StageError>> {
        if index >= self.history.len() {
            return None;
        }
        let mut history = self.history.clone();
        history.remove(index);
        Some(self.rerun(history))
    }

    fn rerun(&mut self, history: Vec<PromptSpec>) -> Result<i64, StageError> {
        let before = self.final_mask().count() as i64;
        let state = segment_image(&self.image, &self.config, &history)?;
        self.history = history;
        self.state = state;
        Ok(self.final_mask().count() as i64 - before)
    }

    /// The binarized final mask as PNG bytes.
    pub fn mask_png(&self) -> Result<Vec<u8>, Error> {
        encode_png(&binarize(self.final_mask()))
    }

    /// Carves foreground pixels outside the final mask.
    pub fn export(&self, machine: &MachineConfig, optimize: bool) -> Result<CompiledProgram, StageError> {
        compile_mask(&self.state.uncut_mask(), machine, optimize)
    }

    pub fn evaluate(&self, truth: &BinaryMask) -> Result<EvalReport, Error> {
        let item = EvalItem { id: self.id.clone(), prediction: self.final_mask().clone(), truth: truth.clone() };
        let mut report = evaluate_items(&[item])?;
        report.grade = grade_region(&self.image, self.final_mask()).ok();
        Ok(report)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PersistedSession {
    config: PipelineConfig,
    history: Vec<PromptSpec>,
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// In-memory sessions, optionally mirrored to a directory as
/// `<dir>/<id>/image.png` plus `<dir>/<id>/session.json`.
#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a persistent store and replays every saved session. Entries that
    /// fail to load are skipped and returned alongside the store.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<(Self, Vec<(PathBuf, String)>)> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        let mut skipped = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        entries.sort();
        for path in entries {
            match load_session(&path) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                }
                Err(reason) => skipped.push((path, reason)),
            }
        }
        Ok((Self { sessions: RwLock::new(sessions), dir: Some(dir) }, skipped))
    }

    pub fn get(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.read().expect("session map poisoned").get(id).cloned()
    }

    pub fn insert(&self, session: Session) -> io::Result<SessionHandle> {
        if let Some(dir) = &self.dir {
            let sdir = dir.join(&session.id);
            fs::create_dir_all(&sdir)?;
            let png = encode_png(&session.image).map_err(io::Error::other)?;
            fs::write(sdir.join("image.png"), png)?;
            self.persist(&session)?;
        }
        let id = session.id.clone();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().expect("session map poisoned").insert(id, handle.clone());
        Ok(handle)
    }

    /// Writes the prompt history of `session` if the store is persistent.
    pub fn persist(&self, session: &Session) -> io::Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let saved = PersistedSession { config: session.config.clone(), history: session.history.clone() };
        let json = serde_json::to_vec_pretty(&saved).map_err(io::Error::other)?;
        let path = dir.join(&session.id).join("session.json");
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(tmp, path)
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn load_session(path: &Path) -> Result<Session, String> {
    let id = path.file_name().and_then(|n| n.to_str()).ok_or("invalid session directory name")?.to_string();
    let image = fs::read(path.join("image.png")).map_err(|e| e.to_string())?;
    let image = decode_png(&image).map_err(|e| e.to_string())?;
    let saved: PersistedSession = serde_json::from_slice(&fs::read(path.join("session.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    Session::replay(id, image, saved.config, saved.history).map_err(|e| e.to_string())
}
