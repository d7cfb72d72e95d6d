//! Micro-benchmarks for the training-step building blocks.

use candle_core::Device;
use cl_core::models::classifier::{Classifier, ClassifierArch};
use cl_core::models::losses::nll_loss;
use cl_core::nn::{Adam, Optimizer, Sgd, TensorRng};
use std::time::Instant;

fn main() -> cl_core::Result<()> {
    let dev = Device::Cpu;
    let mut rng = TensorRng::new(0);
    let x = rng.uniform(0.0, 1.0, &[64, 1, 28, 28], &dev, candle_core::DType::F32)?;
    let labels: Vec<u16> = (0..64).map(|i| (i % 10) as u16).collect();

    for arch in [ClassifierArch::Cnn, ClassifierArch::CnnRegularized, ClassifierArch::Mlp] {
        let mut clf = Classifier::new(arch, 10, &mut rng, &dev)?;
        let vars = clf.store().vars();
        let mut opt = Sgd::new(0.01, 0.9);
        // warmup
        for _ in 0..3 {
            let lp = clf.forward(&x, true, &mut rng)?;
            let loss = nll_loss(&lp, &labels)?;
            let grads = loss.backward()?;
            opt.step(&vars, &grads)?;
        }
        let n = 30;
        let t0 = Instant::now();
        for _ in 0..n {
            let lp = clf.forward(&x, true, &mut rng)?;
            let loss = nll_loss(&lp, &labels)?;
            let grads = loss.backward()?;
            opt.step(&vars, &grads)?;
        }
        let per = t0.elapsed().as_secs_f64() / n as f64 * 1000.0;
        // forward only
        let t1 = Instant::now();
        for _ in 0..n {
            let lp = clf.forward(&x, false, &mut rng)?;
            let _ = lp.sum_all()?.to_scalar::<f32>()?;
        }
        let fwd = t1.elapsed().as_secs_f64() / n as f64 * 1000.0;
        println!("{arch:?}: step {per:.1} ms  fwd {fwd:.1} ms");
    }

    // eval batch 256 forward
    let xe = rng.uniform(0.0, 1.0, &[256, 1, 28, 28], &dev, candle_core::DType::F32)?;
    let mut clf = Classifier::new(ClassifierArch::Cnn, 10, &mut rng, &dev)?;
    let t = Instant::now();
    let n = 20;
    for _ in 0..n {
        let _ = clf.predict(&xe)?;
    }
    println!("eval fwd b256: {:.1} ms", t.elapsed().as_secs_f64() / n as f64 * 1000.0);

    // MLP GAN pair of nets
    use cl_core::models::{GenArch, GenBackbone, GenFamily, GeneratorModel};
    for (backbone, width) in [(GenBackbone::Mlp, 256), (GenBackbone::Conv, 32), (GenBackbone::Conv, 64)] {
        let arch = GenArch::new(GenFamily::Gan, backbone, width, 10);
        let gen = GeneratorModel::new(arch, &mut rng, &dev)?;
        let g_vars = gen.dec_store.vars();
        let d_vars = gen.critic_store.vars();
        let mut g_opt = Adam::new(2e-4, 0.5, 0.999);
        let mut d_opt = Adam::new(2e-4, 0.5, 0.999);
        let xr = rng.uniform(-1.0, 1.0, &[64, 1, 28, 28], &dev, candle_core::DType::F32)?;
        let n = 15;
        let t0 = Instant::now();
        for _ in 0..n {
            let z = rng.randn(&[64, gen.arch.latent_dim], &dev, candle_core::DType::F32)?;
            let fake = gen.generate(&z, None)?.detach();
            let d_real = gen.discriminate(&xr, None)?;
            let d_fake = gen.discriminate(&fake, None)?;
            let (ld, _) = cl_core::models::losses::gan_losses(&d_real, &d_fake)?;
            let grads = ld.backward()?;
            d_opt.step(&d_vars, &grads)?;
            let z = rng.randn(&[64, gen.arch.latent_dim], &dev, candle_core::DType::F32)?;
            let fake = gen.generate(&z, None)?;
            let d_fake = gen.discriminate(&fake, None)?;
            let lg = d_fake.log()?.mean_all()?.neg()?;
            let grads = lg.backward()?;
            g_opt.step(&g_vars, &grads)?;
        }
        let per = t0.elapsed().as_secs_f64() / n as f64 * 1000.0;
        println!("GAN {backbone:?} w{width}: full step {per:.1} ms");
    }

    // VAE MLP step
    {
        let arch = GenArch::new(GenFamily::Vae, GenBackbone::Mlp, 200, 10);
        let gen = GeneratorModel::new(arch, &mut rng, &dev)?;
        let mut vars = gen.dec_store.vars();
        vars.extend(gen.enc_store.vars());
        let mut opt = Adam::new(2e-4, 0.5, 0.999);
        let xr = rng.uniform(0.0, 1.0, &[64, 1, 28, 28], &dev, candle_core::DType::F32)?;
        let n = 15;
        let t0 = Instant::now();
        for _ in 0..n {
            let (x_hat, mu, sigma) = gen.vae_forward(&xr, None, &mut rng)?;
            let loss = cl_core::models::losses::vae_loss(&xr, &x_hat, &mu, &sigma)?;
            let grads = loss.backward()?;
            opt.step(&vars, &grads)?;
        }
        println!("VAE Mlp w200: step {:.1} ms", t0.elapsed().as_secs_f64() / n as f64 * 1000.0);
    }
    Ok(())
}
