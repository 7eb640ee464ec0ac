use std::fs;
use std::path::{Path, PathBuf};

use super::{read_pfm, read_pnm};
use crate::image::{shape_mismatch, Image, ScalarMap};
use crate::{Error, Result};

const LEFT: &[&str] = &["im0.ppm", "im0.pgm"];
const RIGHT: &[&str] = &["im1.ppm", "im1.pgm"];
const DISP_LEFT: &[&str] = &["disp0.pfm", "disp0GT.pfm"];
const DISP_RIGHT: &[&str] = &["disp1.pfm", "disp1GT.pfm"];

/// One scene folder.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub name: String,
    pub left: PathBuf,
    pub right: PathBuf,
    /// Left-view ground truth; `None` marks an unsupervised scene.
    pub disparity: Option<PathBuf>,
    pub right_disparity: Option<PathBuf>,
    /// `ndisp` from `calib.txt`, if present.
    pub ndisp: Option<u32>,
}

impl SceneRecord {
    pub fn is_supervised(&self) -> bool {
        self.disparity.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkippedScene {
    pub name: String,
    pub missing: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetIndex {
    pub scenes: Vec<SceneRecord>,
    pub skipped: Vec<SkippedScene>,
}

/// Scans `root` for scene folders containing `im0`/`im1` images (PPM or
/// PGM) and optional `disp0`/`disp1` PFM ground truth. Folders without both
/// images are skipped with a warning. Nothing is written.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut index = DatasetIndex::default();
    for dir in dirs {
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let left = first_existing(&dir, LEFT);
        let right = first_existing(&dir, RIGHT);
        match (left, right) {
            (Some(left), Some(right)) => index.scenes.push(SceneRecord {
                name,
                left,
                right,
                disparity: first_existing(&dir, DISP_LEFT),
                right_disparity: first_existing(&dir, DISP_RIGHT),
                ndisp: read_ndisp(&dir.join("calib.txt")),
            }),
            (left, right) => {
                let mut missing = vec![];
                if left.is_none() {
                    missing.push("im0".to_string());
                }
                if right.is_none() {
                    missing.push("im1".to_string());
                }
                log::warn!("skipping scene {name}: missing {}", missing.join(", "));
                index.skipped.push(SkippedScene { name, missing });
            }
        }
    }
    Ok(index)
}

fn first_existing(dir: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| dir.join(n)).find(|p| p.is_file())
}

fn read_ndisp(path: &Path) -> Option<u32> {
    let text = fs::read_to_string(path).ok()?;
    text.lines()
        .filter_map(|l| l.split_once('='))
        .find(|(k, _)| k.trim() == "ndisp")
        .and_then(|(_, v)| v.trim().parse().ok())
}

/// Images and ground truth of one scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub left: Image,
    pub right: Image,
    pub disparity: Option<ScalarMap>,
    pub right_disparity: Option<ScalarMap>,
}

pub fn load_scene(record: &SceneRecord) -> Result<Scene> {
    let left = read_pnm(&record.left)?;
    let right = read_pnm(&record.right)?;
    if left.shape() != right.shape() || left.channels() != right.channels() {
        return Err(shape_mismatch(left.shape(), right.shape()));
    }
    let load = |p: &Option<PathBuf>| -> Result<Option<ScalarMap>> {
        p.as_ref()
            .map(|p| {
                let map = read_pfm(p)?.into_scalar_map()?;
                if map.shape() != left.shape() {
                    return Err(shape_mismatch(map.shape(), left.shape()));
                }
                Ok(map)
            })
            .transpose()
    };
    Ok(Scene {
        name: record.name.clone(),
        disparity: load(&record.disparity)?,
        right_disparity: load(&record.right_disparity)?,
        left,
        right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{encode_pfm, write_ppm};

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let idx = load_dataset(dir.path()).unwrap();
        assert!(idx.scenes.is_empty() && idx.skipped.is_empty());
    }

    #[test]
    fn missing_root_is_an_error() {
        assert!(load_dataset("/definitely/not/here").is_err());
    }

    #[test]
    fn two_scenes_one_unsupervised_one_broken() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(2, 3, 3, 0.5).unwrap();
        for scene in ["a", "b", "c"] {
            fs::create_dir(dir.path().join(scene)).unwrap();
        }
        for scene in ["a", "b"] {
            write_ppm(&img, dir.path().join(scene).join("im0.ppm")).unwrap();
            write_ppm(&img, dir.path().join(scene).join("im1.ppm")).unwrap();
        }
        write_ppm(&img, dir.path().join("c/im0.ppm")).unwrap();
        fs::write(dir.path().join("a/disp0.pfm"), encode_pfm(2, 3, 1, &[1.0; 6]).unwrap()).unwrap();
        fs::write(dir.path().join("a/calib.txt"), "cam0=[...]\nndisp=64\n").unwrap();

        let idx = load_dataset(dir.path()).unwrap();
        assert_eq!(idx.scenes.len(), 2);
        assert!(idx.scenes[0].is_supervised());
        assert_eq!(idx.scenes[0].ndisp, Some(64));
        assert!(!idx.scenes[1].is_supervised());
        assert_eq!(idx.skipped, vec![SkippedScene { name: "c".into(), missing: vec!["im1".into()] }]);

        let scene = load_scene(&idx.scenes[0]).unwrap();
        assert_eq!(scene.disparity.unwrap().get(1, 2), 1.0);
    }

    #[test]
    fn scene_shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = dir.path().join("s");
        fs::create_dir(&s).unwrap();
        write_ppm(&Image::filled(2, 3, 3, 0.5).unwrap(), s.join("im0.ppm")).unwrap();
        write_ppm(&Image::filled(3, 3, 3, 0.5).unwrap(), s.join("im1.ppm")).unwrap();
        let idx = load_dataset(dir.path()).unwrap();
        assert!(load_scene(&idx.scenes[0]).is_err());
    }
}
