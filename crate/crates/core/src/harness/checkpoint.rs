//! Versioned binary checkpoints.
//!
//! Layout (little-endian): the magic `TRENCKPT`, a `u32` format version, then
//! tagged sections `[tag: 4 bytes][len: u64][payload]` in the order `CONF`
//! (effective config text), `VOCB` (source vocabulary), optional `TVCB`
//! (target vocabulary), `PARM` (parameters as f64), optional `ADAM`
//! (optimizer moments) and an empty `END!`. Strings are `u32` length + UTF-8.

use std::path::Path;

use super::adam::Adam;
use crate::autodiff::{Init, ParamSet, Tensor};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::vocab::{Vocab, EOS};

pub const MAGIC: &[u8; 8] = b"TRENCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: Config,
    pub vocab: Vocab,
    pub target_vocab: Option<Vocab>,
    pub params: ParamSet<f64>,
    pub adam: Option<Adam<f64>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, t: &Tensor<f64>) {
        self.u32(t.rank() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &v in t.data() {
            self.f64(v);
        }
    }
    fn section(&mut self, tag: &[u8; 4], body: Writer) {
        self.0.extend_from_slice(tag);
        self.u64(body.0.len() as u64);
        self.0.extend_from_slice(&body.0);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(corrupt("truncated file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
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
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8"))
    }
    fn tensor(&mut self) -> Result<Tensor<f64>> {
        let rank = self.u32()? as usize;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("bad shape"))?;
        if n.checked_mul(8).is_none_or(|b| b > self.buf.len() - self.pos) {
            return Err(corrupt("truncated file"));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Tensor::new(shape, data)
    }
    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_vocab(v: &Vocab) -> Writer {
    let mut w = Writer(Vec::new());
    let ordinary = &v.tokens()[EOS + 1..];
    w.u32(ordinary.len() as u32);
    for t in ordinary {
        w.str(t);
    }
    w
}

fn read_vocab(r: &mut Reader) -> Result<Vocab> {
    let n = r.u32()? as usize;
    let tokens = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    Vocab::from_tokens(tokens).map_err(|e| corrupt(e.to_string()))
}

fn write_init(w: &mut Writer, init: Init) {
    match init {
        Init::FanIn => {
            w.u8(0);
            w.f64(0.0);
        }
        Init::Uniform(b) => {
            w.u8(1);
            w.f64(b);
        }
        Init::Zeros => {
            w.u8(2);
            w.f64(0.0);
        }
        Init::Constant(c) => {
            w.u8(3);
            w.f64(c);
        }
    }
}

fn read_init(r: &mut Reader) -> Result<Init> {
    let tag = r.u8()?;
    let x = r.f64()?;
    match tag {
        0 => Ok(Init::FanIn),
        1 => Ok(Init::Uniform(x)),
        2 => Ok(Init::Zeros),
        3 => Ok(Init::Constant(x)),
        t => Err(corrupt(format!("unknown initializer tag {t}"))),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Writer(MAGIC.to_vec());
        out.u32(VERSION);
        let mut conf = Writer(Vec::new());
        conf.str(&self.config.to_string());
        out.section(b"CONF", conf);
        out.section(b"VOCB", write_vocab(&self.vocab));
        if let Some(tv) = &self.target_vocab {
            out.section(b"TVCB", write_vocab(tv));
        }
        let mut parm = Writer(Vec::new());
        parm.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            parm.str(name);
            write_init(&mut parm, self.params.init_of(name).unwrap_or(Init::Zeros));
            parm.tensor(t);
        }
        out.section(b"PARM", parm);
        if let Some(adam) = &self.adam {
            let mut a = Writer(Vec::new());
            a.u64(adam.step);
            a.f64(adam.beta1);
            a.f64(adam.beta2);
            a.f64(adam.eps);
            a.u32(adam.moments.len() as u32);
            for (name, (m, v)) in &adam.moments {
                a.str(name);
                a.tensor(m);
                a.tensor(v);
            }
            out.section(b"ADAM", a);
        }
        out.section(b"END!", Writer(Vec::new()));
        out.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8).map_err(|_| corrupt("not a checkpoint file"))? != MAGIC {
            return Err(corrupt("bad magic bytes; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("format version {version}, this build reads {VERSION}")));
        }
        let (mut config, mut vocab, mut target_vocab, mut params, mut adam) = (None, None, None, None, None);
        loop {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            let body = r.take(len)?;
            let mut s = Reader { buf: body, pos: 0 };
            match &tag {
                b"CONF" => config = Some(Config::parse(&s.str()?)?),
                b"VOCB" => vocab = Some(read_vocab(&mut s)?),
                b"TVCB" => target_vocab = Some(read_vocab(&mut s)?),
                b"PARM" => {
                    let mut p = ParamSet::new();
                    for _ in 0..s.u32()? {
                        let name = s.str()?;
                        let init = read_init(&mut s)?;
                        p.insert(&name, s.tensor()?, init)?;
                    }
                    params = Some(p);
                }
                b"ADAM" => {
                    let mut a = Adam::new(0.0, 0.0, 0.0);
                    a.step = s.u64()?;
                    a.beta1 = s.f64()?;
                    a.beta2 = s.f64()?;
                    a.eps = s.f64()?;
                    for _ in 0..s.u32()? {
                        let name = s.str()?;
                        let m = s.tensor()?;
                        a.moments.insert(name, (m, s.tensor()?));
                    }
                    adam = Some(a);
                }
                b"END!" => break,
                other => return Err(corrupt(format!("unknown section {:?}", String::from_utf8_lossy(other)))),
            }
            if !s.done() {
                return Err(corrupt(format!("trailing bytes in section {}", String::from_utf8_lossy(&tag))));
            }
        }
        if !r.done() {
            return Err(corrupt("data after the end marker"));
        }
        Ok(Checkpoint {
            config: config.ok_or_else(|| corrupt("missing CONF section"))?,
            vocab: vocab.ok_or_else(|| corrupt("missing VOCB section"))?,
            target_vocab,
            params: params.ok_or_else(|| corrupt("missing PARM section"))?,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf)
    }
}
