//! Seeded synthetic cohorts: an ellipsoidal brain with a resection cavity,
//! enhancing rim fragments (bright on T1w-CE only) and blood mimics (bright on
//! both scans). Intensities are chosen so that Otsu separates tissue from the
//! bright class on both scans.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;

use super::folds::FoldPlan;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, GridGeometry, Intensity, VoxelGrid};
use crate::nifti::{write_mask, write_volume, DataType};
use crate::post::{connected_components, Connectivity, MIN_COMPONENT_VOXELS};

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomParams {
    pub shape: [usize; 3],
    pub spacing_mm: f64,
    pub noise_sigma: f64,
    /// Tumor fragments per patient, drawn uniformly from `0..=max_blobs`.
    pub max_blobs: usize,
    pub tumor_radius: (f64, f64),
    pub blood_radius: (f64, f64),
    pub cavity_radius: (f64, f64),
    /// Hospital count; the last one is held out as the test set.
    pub hospitals: usize,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            shape: [48, 48, 40],
            spacing_mm: 1.0,
            noise_sigma: 5.0,
            max_blobs: 3,
            tumor_radius: (3.0, 5.0),
            blood_radius: (3.0, 4.5),
            cavity_radius: (5.0, 7.0),
            hospitals: 6,
        }
    }
}

const TISSUE: f64 = 100.0;
const BRIGHT: f64 = 300.0;
const SKULL: f64 = 400.0;
const CAVITY_CE: f64 = 70.0;
const CAVITY_T1W: f64 = 85.0;
const ATTEMPTS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub patient_id: String,
    pub hospital: String,
    pub blobs: usize,
    pub blood_mimics: usize,
    pub gt_voxels: usize,
    pub gt_volume_ml: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomCohort {
    pub manifest: PathBuf,
    pub fold_plan: PathBuf,
    pub truths: Vec<PhantomTruth>,
}

struct Phantom {
    t1ce: VoxelGrid,
    t1w: VoxelGrid,
    brain: BinaryMask,
    gt: BinaryMask,
    blobs: usize,
    blood_mimics: usize,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn sphere(geom: &GridGeometry, centre: [f64; 3], radius: f64) -> BinaryMask {
    BinaryMask::from_fn(geom.clone(), |[x, y, z]| {
        let d = [x as f64 - centre[0], y as f64 - centre[1], z as f64 - centre[2]];
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius
    })
}

fn make_phantom(index: usize, seed: u64, p: &PhantomParams) -> Result<Phantom> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let geom = GridGeometry::with_spacing(p.shape, [p.spacing_mm; 3])?;
    let centre = p.shape.map(|n| (n as f64 - 1.0) / 2.0);
    let radii = [0.4 * p.shape[0] as f64, 0.44 * p.shape[1] as f64, 0.4 * p.shape[2] as f64];
    let ellipse = |[x, y, z]: [usize; 3]| {
        let q = [x as f64, y as f64, z as f64];
        (0..3).map(|a| ((q[a] - centre[a]) / radii[a]).powi(2)).sum::<f64>().sqrt()
    };
    let brain = BinaryMask::from_fn(geom.clone(), |c| ellipse(c) <= 1.0);
    let skull = BinaryMask::from_fn(geom.clone(), |c| {
        let e = ellipse(c);
        e > 1.0 && e <= 1.15
    });
    let deep = BinaryMask::from_fn(geom.clone(), |c| ellipse(c) <= 0.85);

    let cavity_r = uniform(&mut rng, p.cavity_radius);
    let cavity_c = centre.map(|c| c + rng.gen_range(-3.0..3.0));
    let cavity = sphere(&geom, cavity_c, cavity_r);

    let mut tumor = BinaryMask::empty(geom.clone());
    let blobs = rng.gen_range(0..=p.max_blobs);
    for _ in 0..blobs {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let r = uniform(&mut rng, p.tumor_radius);
            let c = [0, 1, 2].map(|a| cavity_c[a] + dir[a] * cavity_r);
            let ball = sphere(&geom, c, r);
            let blob = BinaryMask::from_fn(geom.clone(), |[x, y, z]| {
                let i = geom.index(x, y, z);
                ball.data()[i] && deep.data()[i] && !cavity.data()[i]
            });
            let labels = connected_components(&blob, Connectivity::TwentySix);
            if labels.components().len() == 1 && blob.count() >= MIN_COMPONENT_VOXELS {
                for (t, b) in tumor.data_mut().iter_mut().zip(blob.data()) {
                    *t |= *b;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!("phantom {index}: could not place a tumor fragment")));
        }
    }

    let mut blood = BinaryMask::empty(geom.clone());
    let blood_mimics = rng.gen_range(1..=2);
    for _ in 0..blood_mimics {
        let mut placed = false;
        for _ in 0..ATTEMPTS {
            let r = uniform(&mut rng, p.blood_radius);
            let c = [0, 1, 2].map(|a| centre[a] + rng.gen_range(-0.6..0.6) * radii[a]);
            let ball = sphere(&geom, c, r);
            let halo = sphere(&geom, c, r + 2.0);
            let clear = halo.data().iter().enumerate().all(|(i, &h)| !h || (!tumor.data()[i] && !cavity.data()[i]));
            let inside = ball.is_subset_of(&deep);
            if clear && inside && ball.count() > 0 {
                for (t, b) in blood.data_mut().iter_mut().zip(ball.data()) {
                    *t |= *b;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InvalidArgument(format!("phantom {index}: could not place a blood mimic")));
        }
    }

    let noise = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let n = geom.len();
    let mut ce = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let (a, b) = if tumor.data()[i] {
            (BRIGHT, TISSUE)
        } else if blood.data()[i] {
            (BRIGHT, BRIGHT)
        } else if cavity.data()[i] && brain.data()[i] {
            (CAVITY_CE, CAVITY_T1W)
        } else if brain.data()[i] {
            (TISSUE, TISSUE)
        } else if skull.data()[i] {
            (SKULL, SKULL)
        } else {
            (0.0, 0.0)
        };
        ce[i] = a + noise.sample(&mut rng);
        w[i] = b + noise.sample(&mut rng);
    }
    Ok(Phantom {
        t1ce: VoxelGrid::new(geom.clone(), ce, Intensity::Raw)?,
        t1w: VoxelGrid::new(geom, w, Intensity::Raw)?,
        brain,
        gt: tumor,
        blobs,
        blood_mimics,
    })
}

/// Write `n` phantom patients plus `manifest.csv` and `folds.txt` into `dir`.
/// Identical `(n, seed, params)` give byte-identical files.
pub fn generate_phantom_cohort(dir: impl AsRef<Path>, n: usize, seed: u64, params: &PhantomParams) -> Result<PhantomCohort> {
    if n == 0 {
        return Err(Error::InvalidArgument("phantom cohort needs at least one patient".into()));
    }
    if params.hospitals < 2 {
        return Err(Error::InvalidArgument("phantom cohort needs at least two hospitals".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let hospital = |i: usize| format!("H{}", i % params.hospitals);

    let truths = (0..n)
        .into_par_iter()
        .map(|i| -> Result<PhantomTruth> {
            let id = format!("phantom{i:03}");
            let ph = make_phantom(i, seed, params)?;
            write_volume(&ph.t1ce, dir.join(format!("{id}_t1ce.nii.gz")), DataType::F32)?;
            write_volume(&ph.t1w, dir.join(format!("{id}_t1w.nii.gz")), DataType::F32)?;
            write_mask(&ph.brain, dir.join(format!("{id}_brain.nii.gz")))?;
            write_mask(&ph.gt, dir.join(format!("{id}_gt.nii.gz")))?;
            Ok(PhantomTruth {
                hospital: hospital(i),
                blobs: ph.blobs,
                blood_mimics: ph.blood_mimics,
                gt_voxels: ph.gt.count(),
                gt_volume_ml: ph.gt.volume_ml(),
                patient_id: id,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)?;
    w.write_record(["patient_id", "hospital", "t1ce", "t1w", "brain_mask", "gt", "gt_volume_ml"])?;
    for t in &truths {
        let id = &t.patient_id;
        w.write_record([
            id.clone(),
            t.hospital.clone(),
            format!("{id}_t1ce.nii.gz"),
            format!("{id}_t1w.nii.gz"),
            format!("{id}_brain.nii.gz"),
            format!("{id}_gt.nii.gz"),
            t.gt_volume_ml.to_string(),
        ])?;
    }
    w.flush()?;

    let last = params.hospitals - 1;
    let folds = (0..last).map(|k| (k as u32, vec![format!("H{k}")])).collect();
    let plan = FoldPlan::new(folds, vec![format!("H{last}")])?;
    let fold_plan = dir.join("folds.txt");
    std::fs::write(&fold_plan, plan.to_text())?;
    Ok(PhantomCohort { manifest, fold_plan, truths })
}
