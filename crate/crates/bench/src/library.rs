use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use trsmpc::lcd::{
    load_sample_set, optimize_lcd_set, save_sample_set, set_file_name, LcdSampleSet,
};

use crate::Result;

/// Optimiser iterations per start when a set must be generated.
pub const DEFAULT_BUDGET: usize = 400;
/// Seed of generated sets, so a missing file regenerates identically.
pub const DEFAULT_SEED: u64 = 0;

/// LCD sets keyed by `(N, d)`: loaded from a directory, or generated and
/// written there on first use.
pub struct LcdLibrary {
    dir: PathBuf,
    cache: Mutex<HashMap<(usize, usize), Arc<LcdSampleSet>>>,
}

impl LcdLibrary {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, n: usize, dim: usize) -> PathBuf {
        self.dir.join(set_file_name(n, dim))
    }

    pub fn get(&self, n: usize, dim: usize) -> Result<Arc<LcdSampleSet>> {
        // hold the lock while generating so concurrent cells do not duplicate work
        let mut cache = self.cache.lock().expect("lcd cache poisoned");
        if let Some(set) = cache.get(&(n, dim)) {
            return Ok(Arc::clone(set));
        }
        let path = self.path_for(n, dim);
        let set = if path.exists() {
            load_sample_set(&path)?
        } else {
            let set = optimize_lcd_set(n, dim, DEFAULT_BUDGET, DEFAULT_SEED)?.set;
            if std::fs::create_dir_all(&self.dir).is_ok() {
                // a read-only library still works from memory
                if let Err(e) = save_sample_set(&set, &path) {
                    eprintln!("warning: could not cache LCD set: {e}");
                }
            }
            set
        };
        let set = Arc::new(set);
        cache.insert((n, dim), Arc::clone(&set));
        Ok(set)
    }
}
