use std::fs;
use std::path::{Path, PathBuf};

use boldkit::volume_io::{write_nifti, Volume4D};

use crate::error::{CliError, CliResult};

/// Files written into an output directory. Unless [`OutputDir::commit`] is
/// called, everything written (and the directory, if this created it) is
/// removed on drop.
pub struct OutputDir {
    root: PathBuf,
    created_root: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root).map_err(|source| CliError::Output {
            path: root.to_path_buf(),
            source,
        })?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            created_root,
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.written
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect()
    }

    pub fn text(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let p = self.path(name);
        self.written.push(p.clone());
        fs::write(&p, contents).map_err(|source| CliError::Output { path: p, source })
    }

    pub fn nifti(&mut self, name: &str, vol: &Volume4D) -> CliResult<()> {
        let p = self.path(name);
        self.written.push(p.clone());
        write_nifti(vol, &p)?;
        Ok(())
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_root {
            let _ = fs::remove_dir(&self.root);
        }
    }
}
