use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use pyrreg::cnn::Network;
use pyrreg::dataio::{
    load_checkpoint, load_dataset, load_scene, read_pfm, read_pnm, render_disparity, write_pfm, write_pgm,
    write_ppm,
};
use pyrreg::estimator::{BlockMatchOracle, CnnEstimator, Estimator, StereoMode};
use pyrreg::eval::{bad_pixel_report, format_records, format_table, occlusion_mask, MaskPolicy, SceneResult};
use pyrreg::image::{DisplacementField, Image, ScalarMap};
use pyrreg::pyramid::{self, effective_range, recursion_levels, RecursionConfig};
use pyrreg::training::{synth_distortion, DistortionKind, DistortionSpec, TrainConfig, Trainer};

use crate::outputs::Outputs;
use crate::{ArchitectureArg, EstimatorArgs, EstimatorKind, EvalArgs, InspectArgs, RegisterArgs, SynthArgs, SynthKind, TrainArgs};

struct Registrar {
    estimator: Box<dyn Estimator>,
    max_depth: Option<usize>,
    stereo: StereoMode,
}

impl Registrar {
    fn new(args: &EstimatorArgs) -> Result<Self> {
        let estimator: Box<dyn Estimator> = match args.estimator {
            EstimatorKind::Oracle => {
                let mu = args.mu.unwrap_or(2.0);
                if mu < 1.0 || mu.fract() != 0.0 {
                    bail!("oracle --mu must be a positive integer, got {mu}");
                }
                Box::new(BlockMatchOracle::new(mu as u32, args.patch_radius)?)
            }
            EstimatorKind::Cnn => {
                let path = args.checkpoint.as_ref().context("--estimator cnn needs --checkpoint")?;
                let ckpt = load_checkpoint(path)?;
                Box::new(CnnEstimator::new(ckpt.network, args.mu.unwrap_or(ckpt.mu))?)
            }
        };
        Ok(Self {
            estimator,
            max_depth: args.max_depth,
            stereo: StereoMode { enabled: args.stereo },
        })
    }

    fn config(&self) -> RecursionConfig {
        RecursionConfig::for_estimator(self.estimator.as_ref())
            .with_max_depth(self.max_depth)
            .with_stereo(self.stereo)
    }

    fn register(&self, left: &Image, right: &Image) -> Result<DisplacementField> {
        Ok(pyramid::register(left, right, self.estimator.as_ref(), &self.config())?.field)
    }
}

pub fn register(args: RegisterArgs) -> Result<()> {
    let left = read_pnm(&args.left)?;
    let right = read_pnm(&args.right)?;
    let reg = Registrar::new(&args.estimator)?;
    let cfg = reg.config();
    let (h, w) = left.shape();

    let start = Instant::now();
    let field = reg.register(&left, &right)?;
    let elapsed = start.elapsed();

    let mut outputs = Outputs::new();
    write_pfm(&ScalarMap::from_dx(&field), outputs.track(&args.out))?;
    if let Some(p) = &args.out_dy {
        write_pfm(&ScalarMap::from_dy(&field), outputs.track(p))?;
    }
    if let Some(p) = &args.color {
        write_ppm(&render_disparity(&ScalarMap::from_dx(&field), None), outputs.track(p))?;
    }
    outputs.commit();

    println!("levels {}", recursion_levels(&cfg, h, w));
    println!("effective range {} px", effective_range(&cfg, &reg.estimator.spec(), h, w));
    println!("time {:.3} s", elapsed.as_secs_f64());
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = TrainConfig::load(&args.config)?;
    let mut outputs = Outputs::new();
    outputs.track(&cfg.checkpoint);
    if let Some(m) = &cfg.metrics {
        outputs.track(m);
    }
    let checkpoint = cfg.checkpoint.clone();
    let mut trainer = Trainer::new(cfg)?;
    let every = args.log_every.max(1);
    let start = Instant::now();
    let records = trainer.run(|r| {
        if r.step % every == 0 {
            println!("step {} stage {} loss {:.5} epe {:.4}", r.step, r.stage, r.loss, r.epe);
        }
    })?;
    outputs.commit();
    if let Some(last) = records.last() {
        println!("final step {} loss {:.5} epe {:.4}", last.step, last.loss, last.epe);
    }
    println!("checkpoint {}", checkpoint.display());
    println!("time {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let index = load_dataset(&args.dataset)?;
    let registrar = match &args.pred_dir {
        Some(_) => None,
        None => Some(Registrar::new(&args.estimator)?),
    };
    let mut results = Vec::new();
    for record in &index.scenes {
        if !record.is_supervised() {
            log::warn!("scene {} has no ground truth, skipped", record.name);
            continue;
        }
        let scene = load_scene(record)?;
        let gt = scene.disparity.as_ref().expect("supervised scene");
        let (pred, pred_right) = match (&args.pred_dir, &registrar) {
            (Some(dir), _) => {
                let path = dir.join(format!("{}.pfm", record.name));
                let map = read_pfm(&path)?.into_scalar_map()?;
                (map.to_stereo_field(), None)
            }
            (None, Some(reg)) => {
                let l = reg.register(&scene.left, &scene.right)?;
                let r = match &scene.right_disparity {
                    Some(_) => None,
                    None => Some(reg.register(&scene.right, &scene.left)?),
                };
                (l, r)
            }
            (None, None) => unreachable!(),
        };
        let mask = match (&scene.right_disparity, &pred_right) {
            (Some(gt_right), _) => {
                Some(occlusion_mask(&gt.to_stereo_field(), &gt_right.to_stereo_field().scale(-1.0), args.occlusion_tol)?)
            }
            (None, Some(pr)) => Some(occlusion_mask(&pred, pr, args.occlusion_tol)?),
            (None, None) => None,
        };
        let all = bad_pixel_report(&pred, gt, mask.as_ref(), MaskPolicy::All)
            .with_context(|| format!("scene {}", record.name))?;
        let non_occluded = match &mask {
            Some(m) => Some(bad_pixel_report(&pred, gt, Some(m), MaskPolicy::NonOccluded)?),
            None => None,
        };
        results.push(SceneResult { name: record.name.clone(), all, non_occluded });
    }
    if results.is_empty() {
        bail!("no supervised scenes in {}", args.dataset.display());
    }
    print!("{}", format_table(&results));
    for r in &results {
        if let Some((_, reference)) = pyrreg::eval::REFERENCE_BAD2.iter().find(|(n, _)| r.name.eq_ignore_ascii_case(n)) {
            println!("{}: bad2 {:.2}% (reference {:.1}%)", r.name, 100.0 * r.all.bad2, 100.0 * reference);
        }
    }
    if let Some(path) = &args.report {
        let mut outputs = Outputs::new();
        fs::write(outputs.track(path), format_records(&results)).with_context(|| format!("writing {}", path.display()))?;
        outputs.commit();
    }
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let img = read_pnm(&args.image)?;
    let kind = match args.kind {
        SynthKind::Shift => DistortionKind::RandomShift,
        SynthKind::Smooth => DistortionKind::Smooth { sigma: args.sigma },
    };
    let spec = DistortionSpec::new(kind, args.max_magnitude, args.lambda, args.stereo)?;
    let sample = synth_distortion(&img, &spec, args.seed)?;

    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let ext = if img.channels() == 3 { "ppm" } else { "pgm" };
    let mut outputs = Outputs::new();
    let write_img = |img: &Image, path: &Path| -> pyrreg::Result<()> {
        if img.channels() == 3 {
            write_ppm(img, path)
        } else {
            write_pgm(img, path)
        }
    };
    write_img(&sample.img1, outputs.track(&args.out_dir.join(format!("im0.{ext}"))))?;
    write_img(&sample.img2, outputs.track(&args.out_dir.join(format!("im1.{ext}"))))?;
    write_pfm(&ScalarMap::from_dx(&sample.truth), outputs.track(&args.out_dir.join("disp0.pfm")))?;
    if !args.stereo {
        write_pfm(&ScalarMap::from_dy(&sample.truth), outputs.track(&args.out_dir.join("disp0_dy.pfm")))?;
    }
    outputs.commit();
    println!("max displacement {:.3} px", sample.truth.max_abs());
    println!("max slope {:.3}", sample.truth.max_gradient());
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let (net, mu): (Network, Option<f32>) = match &args.checkpoint {
        Some(p) => {
            let c = load_checkpoint(p)?;
            (c.network, Some(c.mu))
        }
        None => match args.architecture {
            ArchitectureArg::Table1 => (Network::table1(), None),
            ArchitectureArg::Compact => (Network::compact(6, 1), None),
        },
    };
    let (rh, rw) = net.receptive_field();
    let rows = net.summary(args.height.unwrap_or(rh), args.width.unwrap_or(rw))?;
    println!("{:>5}  {:<8} {:<8} {:<16} {:>10}  activation", "layer", "type", "config", "output", "params");
    for r in &rows {
        println!(
            "{:>5}  {:<8} {:<8} {:<16} {:>10}  {}",
            r.index,
            r.kind,
            r.config,
            format!("({}, {}, {})", r.output.0, r.output.1, r.output.2),
            r.params,
            r.activation
        );
    }
    if let Some(mu) = mu {
        println!("mu {mu}");
    }
    println!("receptive field {rh}x{rw}");
    println!("total {}", net.count_parameters());
    Ok(())
}
