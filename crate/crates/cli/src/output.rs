use std::cell::RefCell;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::failure::Failure;

/// The output directory of one invocation. Files created through it are
/// removed again unless [`OutDir::commit`] is called.
pub struct OutDir {
    root: PathBuf,
    created_root: bool,
    files: RefCell<Vec<PathBuf>>,
    committed: bool,
}

impl OutDir {
    pub fn open(root: &Path) -> Result<Self, Failure> {
        let created_root = !root.exists();
        std::fs::create_dir_all(root).map_err(|e| Failure::data("E_IO", format!("{}: {e}", root.display())))?;
        Ok(OutDir { root: root.to_path_buf(), created_root, files: RefCell::new(Vec::new()), committed: false })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Registers `name` for cleanup and returns its path.
    pub fn track(&self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        self.files.borrow_mut().push(p.clone());
        p
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        let p = self.track(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Failure::data("E_IO", format!("{}: {e}", p.display())))
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), Failure> {
        let p = self.track(name);
        std::fs::write(&p, contents).map_err(|e| Failure::data("E_IO", format!("{}: {e}", p.display())))
    }

    pub fn commit(&mut self) {
        self.committed = true;
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in self.files.borrow().iter() {
            let _ = std::fs::remove_file(f);
        }
        if self.created_root {
            let _ = std::fs::remove_dir(&self.root);
        }
    }
}
