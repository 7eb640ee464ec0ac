use std::fs;
use std::path::{Path, PathBuf};

/// Files written by a command. Unless [`commit`](Self::commit) is called,
/// they are deleted when the guard is dropped.
#[derive(Default)]
pub struct Outputs {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `path` and returns it.
    pub fn track<'a>(&mut self, path: &'a Path) -> &'a Path {
        self.paths.push(path.to_path_buf());
        path
    }

    pub fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.paths {
            if p.exists() {
                if let Err(e) = fs::remove_file(p) {
                    log::warn!("could not remove partial output {}: {e}", p.display());
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.txt");
        let b = dir.path().join("b.txt");
        {
            let mut o = Outputs::new();
            fs::write(o.track(&a), "x").unwrap();
        }
        assert!(!a.exists());
        let mut o = Outputs::new();
        fs::write(o.track(&b), "y").unwrap();
        o.commit();
        assert!(b.exists());
    }
}
