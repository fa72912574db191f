//! Models the server can fly with, loaded from and saved to a directory.
//! Each model's LQR is solved once, when it is registered.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::Serialize;
use sharedctl::controller::{solve_dare, CostSpec, DEFAULT_DARE_MAX_ITER, DEFAULT_DARE_TOL};
use sharedctl::koopman::{extract_linear, KoopmanModel};
use sharedctl::trial::Assist;
use sharedctl::Error;

#[derive(Debug)]
pub struct ModelRecord {
    pub model_id: String,
    pub path: PathBuf,
    /// The ready-to-use controller, or why the model cannot be flown.
    pub assist: Result<Assist, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelInfo {
    pub model_id: String,
    pub stabilizable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ModelStore {
    dir: PathBuf,
    cost: CostSpec,
    models: RwLock<BTreeMap<String, Arc<ModelRecord>>>,
}

fn prepare(model: &KoopmanModel, cost: &CostSpec) -> Result<Assist, String> {
    let lin = extract_linear(model).map_err(|e| e.to_string())?;
    match solve_dare(&lin, cost, DEFAULT_DARE_TOL, DEFAULT_DARE_MAX_ITER) {
        Ok(sol) => Ok(Assist { solution: Arc::new(sol), cost: cost.clone() }),
        Err(e @ Error::NotStabilizable { .. }) => Err(e.to_string()),
        Err(e) => Err(format!("model not stabilizable: {e}")),
    }
}

impl ModelStore {
    /// Load every `*.json` model in `dir`, creating it if needed. Files that
    /// fail to parse are listed with their error rather than aborting.
    pub fn open(dir: &Path, cost: &CostSpec) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut models = BTreeMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            let Some(id) = path.file_stem().map(|s| s.to_string_lossy().into_owned()) else { continue };
            let assist = KoopmanModel::load(&path).map_err(|e| e.to_string()).and_then(|m| prepare(&m, cost));
            models.insert(id.clone(), Arc::new(ModelRecord { model_id: id, path, assist }));
        }
        Ok(Self { dir: dir.to_owned(), cost: cost.clone(), models: RwLock::new(models) })
    }

    pub fn get(&self, model_id: &str) -> Option<Arc<ModelRecord>> {
        self.models.read().unwrap().get(model_id).cloned()
    }

    pub fn list(&self) -> Vec<ModelInfo> {
        self.models
            .read()
            .unwrap()
            .values()
            .map(|r| ModelInfo {
                model_id: r.model_id.clone(),
                stabilizable: r.assist.is_ok(),
                error: r.assist.as_ref().err().cloned(),
            })
            .collect()
    }

    /// Save a freshly fitted model under the next free `model_NNNN` id and
    /// publish it. The model is registered even if its LQR fails, so a later
    /// start reports the reason.
    pub fn insert(&self, model: &KoopmanModel) -> sharedctl::Result<Arc<ModelRecord>> {
        let assist = prepare(model, &self.cost);
        let mut models = self.models.write().unwrap();
        let id = (models.len()..)
            .map(|n| format!("model_{n:04}"))
            .find(|id| !models.contains_key(id) && !self.dir.join(format!("{id}.json")).exists())
            .expect("unbounded id range");
        let path = self.dir.join(format!("{id}.json"));
        let lqr = assist.as_ref().ok().map(|a| a.solution.export());
        model.save(&path, lqr)?;
        let record = Arc::new(ModelRecord { model_id: id.clone(), path, assist });
        models.insert(id, record.clone());
        Ok(record)
    }
}
