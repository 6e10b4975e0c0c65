//! Fast consistency checks runnable on any installation.

use anyhow::bail;

use contextnet::analysis::{count_flops, count_params};
use contextnet::encoder::{default_config, Reduction};
use contextnet::frontend::{log_mel_filterbank, Waveform};
use contextnet::training::{lr_schedule, TrainConfig};
use contextnet::transducer::{rnnt_loss, DecoderConfig};
use contextnet::Tensor;

fn loss_single_frame() -> anyhow::Result<()> {
    let l = Tensor::<f64>::new(&[1, 1, 4], vec![0.3, -1.0, 2.0, 0.5])?;
    let (loss, _) = rnnt_loss(&l, &[], 0)?;
    let z: f64 = l.data().iter().map(|v| v.exp()).sum();
    let expected = -(0.3f64.exp() / z).ln();
    if (loss - expected).abs() > 1e-12 {
        bail!("loss {loss} != {expected}");
    }
    Ok(())
}

fn loss_gradient() -> anyhow::Result<()> {
    let data: Vec<f64> = (0..3 * 3 * 4).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
    let l = Tensor::new(&[3, 3, 4], data)?;
    let labels = [1, 3];
    let (_, g) = rnnt_loss(&l, &labels, 0)?;
    let h = 1e-6;
    for i in 0..l.len() {
        let mut p = l.clone();
        p.data_mut()[i] += h;
        let mut m = l.clone();
        m.data_mut()[i] -= h;
        let fd = (rnnt_loss(&p, &labels, 0)?.0 - rnnt_loss(&m, &labels, 0)?.0) / (2.0 * h);
        if (fd - g.data()[i]).abs() > 1e-6 {
            bail!("logit {i}: analytic {} vs numeric {fd}", g.data()[i]);
        }
    }
    Ok(())
}

fn frontend_frames() -> anyhow::Result<()> {
    let w = Waveform::new((0..16_000).map(|i| (i as f64 * 0.05).sin() * 0.1).collect(), 16_000)?;
    let f = log_mel_filterbank(&w)?;
    if (f.num_frames(), f.dim()) != (98, 80) {
        bail!("1 s of audio gave {}x{} features", f.num_frames(), f.dim());
    }
    Ok(())
}

fn downsampling() -> anyhow::Result<()> {
    let c = default_config(1.0, 5, Reduction::X8)?;
    for t in 1..=200 {
        if c.output_len(t) != t.div_ceil(8) {
            bail!("T={t} gave {} output frames", c.output_len(t));
        }
    }
    Ok(())
}

fn scaling() -> anyhow::Result<()> {
    for (alpha, target) in [(0.5, 10.8e6), (1.0, 31.4e6), (2.0, 112.7e6)] {
        let r = count_params(&default_config(alpha, 5, Reduction::X8)?, Some(&DecoderConfig::reference(1024)));
        let rel = r.total_params as f64 / target - 1.0;
        if rel.abs() > 0.2 {
            bail!("alpha {alpha}: {} params, {:+.1}% from {target}", r.total_params, rel * 100.0);
        }
    }
    let ratio = count_flops(&default_config(1.0, 5, Reduction::X8)?, 1.0)
        / count_flops(&default_config(1.0, 5, Reduction::X2)?, 1.0);
    if !(0.487 * 0.85..=0.487 * 1.15).contains(&ratio) {
        bail!("8x/2x FLOPs ratio {ratio}");
    }
    Ok(())
}

fn schedule() -> anyhow::Result<()> {
    let c = TrainConfig::default();
    for (step, lr) in [(15_000, 0.0025), (7_500, 0.00125), (60_000, 0.00125)] {
        let got = lr_schedule(step, &c)?;
        if (got - lr).abs() > 1e-12 {
            bail!("lr({step}) = {got}, expected {lr}");
        }
    }
    Ok(())
}

pub fn run() -> anyhow::Result<()> {
    let checks: [(&str, fn() -> anyhow::Result<()>); 6] = [
        ("transducer loss, single frame", loss_single_frame),
        ("transducer loss gradient", loss_gradient),
        ("frontend frame count", frontend_frames),
        ("8x downsampling law", downsampling),
        ("parameter and FLOPs scaling", scaling),
        ("learning-rate schedule", schedule),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        match check() {
            Ok(()) => println!("ok    {name}"),
            Err(e) => {
                failed += 1;
                println!("FAIL  {name}: {e:#}");
            }
        }
    }
    if failed > 0 {
        bail!("{failed} self-test check(s) failed");
    }
    Ok(())
}
