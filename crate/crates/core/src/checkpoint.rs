//! Versioned binary checkpoint of a tuning session.
//!
//! All integers and floats are little-endian. The layout is documented in
//! `docs/checkpoint-format.md`; any change to it bumps [`FORMAT_VERSION`].

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::agent::{AgentHyper, DdpgAgent};
use crate::error::{Error, Result};
use crate::nnet::{Activation, AdamState, Mlp};
use crate::objective::RunningBounds;
use crate::replay::{ReplayBuffer, Transition};

pub const MAGIC: &[u8; 8] = b"KNOBTCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct BestSeen {
    pub step: u64,
    pub objective: f64,
    pub config: Vec<f64>,
}

/// Where the environment loop stood when the checkpoint was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct SessionCursor {
    /// Environment evaluations completed so far.
    pub steps_done: u64,
    pub last_state: Vec<f64>,
    pub last_config: Vec<f64>,
    /// Simulated seconds elapsed (downtime plus measurement).
    pub clock: f64,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub agent: DdpgAgent,
    pub buffer: ReplayBuffer,
    pub bounds: RunningBounds,
    pub best: Option<BestSeen>,
    pub cursor: Option<SessionCursor>,
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(ckpt)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let agent = &ckpt.agent;
    agent.check_shapes()?;
    let (k, m) = (agent.state_dim(), agent.action_dim());
    if ckpt.bounds.min.len() != k || ckpt.bounds.max.len() != k {
        return Err(Error::shape("checkpoint running bounds", k, ckpt.bounds.min.len()));
    }
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(FORMAT_VERSION);
    w.u32(k as u32);
    w.u32(m as u32);

    let h = &agent.hyper;
    w.f64(h.gamma);
    w.f64(h.tau);
    w.u32(h.batch_size as u32);
    w.u32(h.updates_per_step as u32);
    w.u32(h.warmup_steps as u32);
    w.f64(h.noise_sigma_start);
    w.f64(h.noise_sigma_end);
    w.u32(h.noise_decay_steps as u32);
    w.f64(h.actor_lr);
    w.f64(h.critic_lr);
    w.u32(h.replay_capacity as u32);

    w.u64(agent.step_count);
    w.bytes(&agent.rng.get_seed());
    w.u64(agent.rng.get_stream());
    w.bytes(&agent.rng.get_word_pos().to_le_bytes());

    for net in [&agent.actor, &agent.critic, &agent.actor_target, &agent.critic_target] {
        w.u32(net.sizes().len() as u32);
        for &s in net.sizes() {
            w.u32(s as u32);
        }
        w.u8(net.output_activation().code());
        w.u64(net.params().len() as u64);
        w.f64s(net.params());
    }
    for opt in [&agent.actor_opt, &agent.critic_opt] {
        w.u64(opt.step);
        w.f64(opt.learning_rate);
        w.f64(opt.beta1);
        w.f64(opt.beta2);
        w.f64(opt.epsilon);
        w.u64(opt.m.len() as u64);
        w.f64s(&opt.m);
        w.f64s(&opt.v);
    }

    w.u32(ckpt.buffer.capacity() as u32);
    w.u32(ckpt.buffer.len() as u32);
    for t in ckpt.buffer.iter() {
        if t.state.len() != k || t.action.len() != m || t.next_state.len() != k {
            return Err(Error::shape("checkpoint transition", k, t.state.len()));
        }
        w.f64s(&t.state);
        w.f64s(&t.action);
        w.f64(t.reward);
        w.f64s(&t.next_state);
    }

    w.f64s(&ckpt.bounds.min);
    w.f64s(&ckpt.bounds.max);

    match &ckpt.best {
        None => w.u8(0),
        Some(b) => {
            if b.config.len() != m {
                return Err(Error::shape("checkpoint best config", m, b.config.len()));
            }
            w.u8(1);
            w.u64(b.step);
            w.f64(b.objective);
            w.f64s(&b.config);
        }
    }
    match &ckpt.cursor {
        None => w.u8(0),
        Some(c) => {
            if c.last_state.len() != k || c.last_config.len() != m {
                return Err(Error::shape("checkpoint cursor", k, c.last_state.len()));
            }
            w.u8(1);
            w.u64(c.steps_done);
            w.f64s(&c.last_state);
            w.f64s(&c.last_config);
            w.f64(c.clock);
        }
    }
    Ok(w.0)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let k = r.u32()? as usize;
    let m = r.u32()? as usize;

    let mut hyper = AgentHyper {
        gamma: r.f64()?,
        tau: r.f64()?,
        batch_size: r.u32()? as usize,
        updates_per_step: r.u32()? as usize,
        warmup_steps: r.u32()? as usize,
        noise_sigma_start: r.f64()?,
        noise_sigma_end: r.f64()?,
        noise_decay_steps: r.u32()? as usize,
        actor_lr: r.f64()?,
        critic_lr: r.f64()?,
        hidden: Vec::new(),
        replay_capacity: r.u32()? as usize,
    };

    let step_count = r.u64()?;
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut nets = Vec::with_capacity(4);
    for _ in 0..4 {
        let n_sizes = r.u32()? as usize;
        if n_sizes > 64 {
            return Err(Error::CorruptCheckpoint(format!("{n_sizes} layers")));
        }
        let sizes = (0..n_sizes).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let act = Activation::from_code(r.u8()?)
            .ok_or_else(|| Error::CorruptCheckpoint("unknown activation code".into()))?;
        let n = r.u64()? as usize;
        let params = r.f64s(n)?;
        nets.push(Mlp::from_params(&sizes, act, params).map_err(corrupt)?);
    }
    let mut opts = Vec::with_capacity(2);
    for _ in 0..2 {
        let step = r.u64()?;
        let learning_rate = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let epsilon = r.f64()?;
        let n = r.u64()? as usize;
        let m_acc = r.f64s(n)?;
        let v_acc = r.f64s(n)?;
        opts.push(AdamState {
            m: m_acc,
            v: v_acc,
            step,
            learning_rate,
            beta1,
            beta2,
            epsilon,
        });
    }

    let capacity = r.u32()? as usize;
    let len = r.u32()? as usize;
    if capacity == 0 || len > capacity {
        return Err(Error::CorruptCheckpoint(format!("replay length {len} / capacity {capacity}")));
    }
    let mut buffer = ReplayBuffer::new(capacity);
    for _ in 0..len {
        let t = Transition {
            state: r.f64s(k)?,
            action: r.f64s(m)?,
            reward: r.f64()?,
            next_state: r.f64s(k)?,
        };
        buffer.push(t).map_err(corrupt)?;
    }

    let bounds = RunningBounds {
        min: r.f64s(k)?,
        max: r.f64s(k)?,
    };
    let best = match r.u8()? {
        0 => None,
        1 => Some(BestSeen {
            step: r.u64()?,
            objective: r.f64()?,
            config: r.f64s(m)?,
        }),
        f => return Err(Error::CorruptCheckpoint(format!("best-seen flag {f}"))),
    };
    let cursor = match r.u8()? {
        0 => None,
        1 => Some(SessionCursor {
            steps_done: r.u64()?,
            last_state: r.f64s(k)?,
            last_config: r.f64s(m)?,
            clock: r.f64()?,
        }),
        f => return Err(Error::CorruptCheckpoint(format!("cursor flag {f}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut nets = nets.into_iter();
    let actor = nets.next().expect("four networks");
    let critic = nets.next().expect("four networks");
    let actor_target = nets.next().expect("four networks");
    let critic_target = nets.next().expect("four networks");
    hyper.hidden = actor.sizes()[1..actor.sizes().len() - 1].to_vec();
    let mut opts = opts.into_iter();
    let agent = DdpgAgent {
        actor,
        critic,
        actor_target,
        critic_target,
        actor_opt: opts.next().expect("two optimizers"),
        critic_opt: opts.next().expect("two optimizers"),
        hyper,
        step_count,
        rng,
    };
    if agent.state_dim() != k || agent.action_dim() != m {
        return Err(Error::CorruptCheckpoint(format!(
            "header says {k}x{m}, actor is {:?}",
            agent.actor.sizes()
        )));
    }
    agent.check_shapes().map_err(corrupt)?;
    agent.hyper.check().map_err(corrupt)?;
    Ok(Checkpoint {
        agent,
        buffer,
        bounds,
        best,
        cursor,
    })
}

fn corrupt(e: Error) -> Error {
    Error::CorruptCheckpoint(e.to_string())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptCheckpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        if n > (self.buf.len() - self.pos) / 8 {
            return Err(Error::CorruptCheckpoint(format!("array of {n} floats exceeds file")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}
