//! Plain-text checkpoints of generator, EMA generator and discriminator.
//!
//! ```text
//! gsr-checkpoint v1
//! meta step = 500
//! tensor gen.cbn1.gamma 8 64
//! 1 1 1 ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! reading a checkpoint back reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use gsr_core::condgen::{CbnLayer, DiscriminatorNet, GeneratorNet};
use gsr_core::ndcore::Tensor;
use gsr_core::train::TrainState;

pub const MAGIC: &str = "gsr-checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn invalid(line: usize, msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("line {line}: {}", msg.into()))
}

fn push_cbn(out: &mut BTreeMap<String, Tensor>, prefix: &str, c: &CbnLayer) {
    out.insert(format!("{prefix}.gamma"), c.gamma.clone());
    out.insert(format!("{prefix}.beta"), c.beta.clone());
    out.insert(format!("{prefix}.running_mean"), c.running_mean.clone());
    out.insert(format!("{prefix}.running_var"), c.running_var.clone());
}

fn push_generator(out: &mut BTreeMap<String, Tensor>, prefix: &str, g: &GeneratorNet) {
    out.insert(format!("{prefix}.w1"), g.w1.clone());
    push_cbn(out, &format!("{prefix}.cbn1"), &g.cbn1);
    out.insert(format!("{prefix}.w2"), g.w2.clone());
    push_cbn(out, &format!("{prefix}.cbn2"), &g.cbn2);
    out.insert(format!("{prefix}.w_out"), g.w_out.clone());
    out.insert(format!("{prefix}.b_out"), g.b_out.clone());
}

fn push_discriminator(out: &mut BTreeMap<String, Tensor>, d: &DiscriminatorNet) {
    for (name, t) in DiscriminatorNet::param_names().iter().zip(d.params()) {
        out.insert(format!("disc.{name}"), t.clone());
    }
}

impl Checkpoint {
    pub fn from_state(state: &TrainState, meta: &[(String, String)]) -> Self {
        let mut tensors = BTreeMap::new();
        push_generator(&mut tensors, "gen", &state.gen);
        push_generator(&mut tensors, "gen_ema", &state.gen_ema);
        push_discriminator(&mut tensors, &state.disc);
        tensors.insert(
            "lecam.anchors".into(),
            Tensor::new(&[2], vec![state.lecam.alpha_real, state.lecam.alpha_fake]).expect("finite anchors"),
        );
        let mut meta = meta.to_vec();
        meta.push(("step".into(), state.step.to_string()));
        Self { meta, tensors }
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.meta {
            writeln!(w, "meta {k} = {v}")?;
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            writeln!(w, "tensor {name} {}", dims.join(" "))?;
            let vals: Vec<String> = t.data().iter().map(ToString::to_string).collect();
            writeln!(w, "{}", vals.join(" "))?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(r: R) -> io::Result<Self> {
        let mut lines = r.lines().enumerate();
        match lines.next() {
            Some((_, Ok(l))) if l.trim() == MAGIC => {}
            Some((_, Err(e))) => return Err(e),
            _ => return Err(invalid(1, format!("expected `{MAGIC}`"))),
        }
        let mut ck = Checkpoint::default();
        while let Some((i, line)) = lines.next() {
            let line = line?;
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(" = ").ok_or_else(|| invalid(n, "malformed meta line"))?;
                ck.meta.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("tensor ") {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| invalid(n, "tensor without a name"))?;
                let shape = parts
                    .map(|s| s.parse::<usize>().map_err(|_| invalid(n, format!("bad dimension `{s}`"))))
                    .collect::<io::Result<Vec<_>>>()?;
                let (_, body) = lines.next().ok_or_else(|| invalid(n + 1, "missing tensor values"))?;
                let data = body?
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|_| invalid(n + 1, format!("bad value `{s}`"))))
                    .collect::<io::Result<Vec<_>>>()?;
                let t = Tensor::new(&shape, data).map_err(|e| invalid(n + 1, e.to_string()))?;
                if ck.tensors.insert(name.to_string(), t).is_some() {
                    return Err(invalid(n, format!("duplicate tensor `{name}`")));
                }
            } else {
                return Err(invalid(n, "expected `meta` or `tensor`"));
            }
        }
        Ok(ck)
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn take(&self, name: &str, like: &Tensor) -> io::Result<Tensor> {
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, format!("missing tensor `{name}`")))?;
        if t.shape() != like.shape() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape(), like.shape()),
            ));
        }
        Ok(t.clone())
    }

    /// Overwrites the parameters of `net` with the tables stored under
    /// `prefix` (`gen` or `gen_ema`).
    pub fn restore_generator(&self, prefix: &str, net: &mut GeneratorNet) -> io::Result<()> {
        net.w1 = self.take(&format!("{prefix}.w1"), &net.w1)?;
        net.w2 = self.take(&format!("{prefix}.w2"), &net.w2)?;
        net.w_out = self.take(&format!("{prefix}.w_out"), &net.w_out)?;
        net.b_out = self.take(&format!("{prefix}.b_out"), &net.b_out)?;
        for (l, cbn) in [(1, &mut net.cbn1), (2, &mut net.cbn2)] {
            let p = format!("{prefix}.cbn{l}");
            cbn.gamma = self.take(&format!("{p}.gamma"), &cbn.gamma)?;
            cbn.beta = self.take(&format!("{p}.beta"), &cbn.beta)?;
            cbn.running_mean = self.take(&format!("{p}.running_mean"), &cbn.running_mean)?;
            cbn.running_var = self.take(&format!("{p}.running_var"), &cbn.running_var)?;
        }
        Ok(())
    }

    pub fn restore_discriminator(&self, net: &mut DiscriminatorNet) -> io::Result<()> {
        let names = DiscriminatorNet::param_names();
        let loaded = names
            .iter()
            .zip(net.params())
            .map(|(n, t)| self.take(&format!("disc.{n}"), t))
            .collect::<io::Result<Vec<_>>>()?;
        for (dst, src) in net.params_mut().into_iter().zip(loaded) {
            *dst = src;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use gsr_core::condgen::Architecture;
    use gsr_core::data::{make_ring_mixture, sample_dataset, LongTailSpec};
    use gsr_core::train::{train_step, TrainConfig};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = LongTailSpec::new(3, 5.0, 40).unwrap();
        let ds = sample_dataset(&spec, &make_ring_mixture(3, 2.0, 0.15), 1).unwrap();
        let cfg = TrainConfig {
            arch: Architecture { num_classes: 3, latent_dim: 4, hidden: 8 },
            batch_size: 4,
            n_dis: 1,
            ema_start: 0,
            reg: gsr_core::regularizers::RegConfig { n_g: 2, ..Default::default() },
            ..TrainConfig::default()
        };
        let mut st = TrainState::new(&cfg, &ds).unwrap();
        for _ in 0..3 {
            train_step(&mut st, &cfg, &ds).unwrap();
        }
        let ck = Checkpoint::from_state(&st, &[("seed".into(), "0".into())]);
        let mut buf = Vec::new();
        ck.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("step"), Some("3"));

        let mut fresh = TrainState::new(&TrainConfig { seed: 99, ..cfg.clone() }, &ds).unwrap();
        back.restore_generator("gen", &mut fresh.gen).unwrap();
        back.restore_generator("gen_ema", &mut fresh.gen_ema).unwrap();
        back.restore_discriminator(&mut fresh.disc).unwrap();
        assert_eq!(fresh.gen, st.gen);
        assert_eq!(fresh.gen_ema, st.gen_ema);
        assert_eq!(fresh.disc.params(), st.disc.params());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Checkpoint::read("nope\n".as_bytes()).is_err());
        assert!(Checkpoint::read(format!("{MAGIC}\ntensor a 2\n1\n").as_bytes()).is_err());
        assert!(Checkpoint::read(format!("{MAGIC}\ntensor a 1\nx\n").as_bytes()).is_err());
        assert!(Checkpoint::read(format!("{MAGIC}\nhello\n").as_bytes()).is_err());
        let ok = Checkpoint::read(format!("{MAGIC}\nmeta a = b\ntensor t 2\n1 2\n").as_bytes()).unwrap();
        assert_eq!(ok.tensors["t"].data(), &[1.0, 2.0]);
    }
}
