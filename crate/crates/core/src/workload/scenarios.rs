use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Emitter, GenError, Params, Program, Scenario, ScenarioName};
use crate::trace::{FpClass, LoadValue, SourceMap};

const MAIN: u32 = 1;
const HEAP: u64 = 0x4000_0000;

pub(crate) fn build(s: &Scenario) -> Result<(Box<dyn Program>, u32), GenError> {
    let mut p = Params::new(s);
    let threads = p.u64("threads", 1, 1)?;
    if threads > 1024 {
        return Err(GenError::BadParam {
            param: "threads".into(),
            value: threads.to_string(),
            reason: "at most 1024 threads".into(),
        });
    }
    let program: Box<dyn Program> = match s.name {
        ScenarioName::AdjacentEqual => Box::new(AdjacentEqual::new(&mut p)?),
        ScenarioName::LinearSearch => Box::new(LinearSearch::new(&mut p)?),
        ScenarioName::HashCollision => Box::new(HashCollision::new(&mut p)?),
        ScenarioName::Stencil => Box::new(Stencil::new(&mut p)?),
        ScenarioName::ForwardCopy => Box::new(ForwardCopy::new(&mut p)?),
        ScenarioName::CalleeSpill => Box::new(CalleeSpill::new(&mut p)?),
        ScenarioName::SparseZeros => Box::new(SparseZeros::new(&mut p)?),
        ScenarioName::ApproxDrift => Box::new(ApproxDrift::new(&mut p)?),
        ScenarioName::RandomMixed => Box::new(RandomMixed::new(&mut p)?),
    };
    p.finish()?;
    Ok((program, threads as u32))
}

fn base_map() -> SourceMap {
    let mut m = SourceMap::new();
    m.add_site(MAIN, "main", "main.c", 1);
    m
}

fn bad(param: &str, value: &str, reason: &str) -> GenError {
    GenError::BadParam {
        param: param.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

/// Four ints in one static array, loaded front to back.
struct AdjacentEqual {
    values: Vec<u32>,
}

impl AdjacentEqual {
    const A: u64 = 0x1000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        let raw = p.raw("values").unwrap_or("1,1,1,15");
        let values = raw
            .split(',')
            .map(|v| {
                let v = v.trim();
                v.parse::<i64>()
                    .ok()
                    .filter(|x| *x >= i32::MIN as i64 && *x <= u32::MAX as i64)
                    .map(|x| x as u32)
                    .ok_or_else(|| bad("values", raw, "expected comma-separated 32-bit integers"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AdjacentEqual { values })
    }
}

impl Program for AdjacentEqual {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 4)
            .add_site(3, "main", "main.c", 5);
        m.add_loop(1, "main.c", 4, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let n = self.values.len() as u64;
        e.static_image(&[("A", Self::A, 4 * n)])?;
        e.call(MAIN)?;
        for (i, &v) in self.values.iter().enumerate() {
            e.loop_head(1, 2)?;
            e.load_u32(Self::A + 4 * i as u64, v, 3)?;
        }
        e.ret(MAIN)
    }
}

enum Probe {
    Last,
    Random,
    Fixed(u64),
}

/// Repeated linear scans of a sorted key array.
struct LinearSearch {
    n: u64,
    queries: u64,
    probe: Probe,
    seed: u64,
}

impl LinearSearch {
    fn new(p: &mut Params) -> Result<Self, GenError> {
        let n = p.u64("n", 1000, 1)?;
        let queries = p.u64("queries", 1000, 1)?;
        let seed = p.u64("seed", 1, 0)?;
        let probe = match p.raw("probe") {
            None | Some("last") => Probe::Last,
            Some("random") => Probe::Random,
            Some(s) => match s.parse::<u64>() {
                Ok(k) if k < n => Probe::Fixed(k),
                _ => return Err(bad("probe", s, "expected last, random or a key below n")),
            },
        };
        Ok(LinearSearch {
            n,
            queries,
            probe,
            seed,
        })
    }
}

impl Program for LinearSearch {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 10)
            .add_site(3, "findIndex", "main.c", 11)
            .add_site(4, "findIndex", "search.c", 4)
            .add_site(5, "findIndex", "search.c", 5);
        m.add_loop(1, "main.c", 10, None).add_loop(2, "search.c", 4, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        e.call(MAIN)?;
        e.alloc(HEAP, 4 * self.n)?;
        for _ in 0..self.queries {
            let target = match self.probe {
                Probe::Last => self.n - 1,
                Probe::Random => rng.gen_range(0..self.n),
                Probe::Fixed(k) => k,
            };
            e.loop_head(1, 2)?;
            e.call(3)?;
            for x in 0..=target {
                e.loop_head(2, 4)?;
                e.load_u32(HEAP + 4 * x, x as u32, 5)?;
            }
            e.ret(3)?;
        }
        e.free(HEAP)?;
        e.ret(MAIN)
    }
}

/// Chained hash table whose keys all land in one bucket under the bad hash.
struct HashCollision {
    entries: u64,
    buckets: u64,
    lookups: u64,
    bad_hash: bool,
    seed: u64,
}

impl HashCollision {
    const TABLE: u64 = 0x1000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        let entries = p.u64("entries", 128, 1)?;
        let buckets = p.u64("buckets", 64, 1)?;
        let lookups = p.u64("lookups", 1000, 0)?;
        let seed = p.u64("seed", 1, 0)?;
        let bad_hash = match p.raw("hash") {
            None | Some("bad") => true,
            Some("good") => false,
            Some(s) => return Err(bad("hash", s, "expected bad or good")),
        };
        Ok(HashCollision {
            entries,
            buckets,
            lookups,
            bad_hash,
            seed,
        })
    }
}

impl Program for HashCollision {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 20)
            .add_site(3, "main", "main.c", 21)
            .add_site(4, "main", "main.c", 30)
            .add_site(5, "lookup", "main.c", 31)
            .add_site(6, "lookup", "hash.c", 10)
            .add_site(7, "lookup", "hash.c", 12)
            .add_site(8, "lookup", "hash.c", 13)
            .add_site(9, "lookup", "hash.c", 14);
        m.add_loop(1, "main.c", 20, None)
            .add_loop(2, "main.c", 30, None)
            .add_loop(3, "hash.c", 12, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut heads = vec![0u64; self.buckets as usize];
        // entry address -> (key, next)
        let mut nodes = std::collections::HashMap::new();
        let mut keys = Vec::new();
        e.static_image(&[("table", Self::TABLE, 8 * self.buckets)])?;
        e.call(MAIN)?;
        for i in 0..self.entries {
            e.loop_head(1, 2)?;
            let key = if self.bad_hash { i * self.buckets } else { i };
            let b = (key % self.buckets) as usize;
            e.load_u64(Self::TABLE + 8 * b as u64, heads[b], 3)?;
            let node = HEAP + 16 * i;
            e.alloc(node, 16)?;
            nodes.insert(node, (key as u32, heads[b]));
            heads[b] = node;
            keys.push(key);
        }
        for _ in 0..self.lookups {
            let key = keys[rng.gen_range(0..keys.len())];
            let b = (key % self.buckets) as usize;
            e.loop_head(2, 4)?;
            e.call(5)?;
            e.load_u64(Self::TABLE + 8 * b as u64, heads[b], 6)?;
            let mut cur = heads[b];
            while cur != 0 {
                let (k, next) = nodes[&cur];
                e.loop_head(3, 7)?;
                e.load_u32(cur, k, 8)?;
                if k as u64 == key {
                    break;
                }
                e.load_u64(cur + 8, next, 9)?;
                cur = next;
            }
            e.ret(5)?;
        }
        e.ret(MAIN)
    }
}

/// Three-point smoothing that reloads each input element three times.
struct Stencil {
    n: u64,
    steps: u64,
    seed: u64,
}

impl Stencil {
    const A: u64 = 0x10_0000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        Ok(Stencil {
            n: p.u64("n", 1024, 3)?,
            steps: p.u64("steps", 4, 1)?,
            seed: p.u64("seed", 1, 0)?,
        })
    }
}

impl Program for Stencil {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 5)
            .add_site(3, "smooth", "main.c", 6)
            .add_site(4, "smooth", "stencil.c", 8)
            .add_site(5, "smooth", "stencil.c", 9)
            .add_site(6, "smooth", "stencil.c", 10)
            .add_site(7, "smooth", "stencil.c", 11);
        m.add_loop(1, "main.c", 5, None).add_loop(2, "stencil.c", 8, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n as usize;
        let b_base = Self::A + 8 * self.n;
        let mut bufs = [
            (0..n).map(|_| rng.gen_range(1.0..2.0)).collect::<Vec<f64>>(),
            vec![0.0; n],
        ];
        e.static_image(&[("tIn", Self::A, 8 * self.n), ("tOut", b_base, 8 * self.n)])?;
        e.call(MAIN)?;
        for t in 0..self.steps as usize {
            let (src, dst) = (t % 2, 1 - t % 2);
            let src_base = if src == 0 { Self::A } else { b_base };
            e.loop_head(1, 2)?;
            e.call(3)?;
            let mut next = bufs[src].clone();
            for i in 1..n - 1 {
                e.loop_head(2, 4)?;
                let s = &bufs[src];
                e.load_f64(src_base + 8 * (i as u64 - 1), s[i - 1], 5)?;
                e.load_f64(src_base + 8 * i as u64, s[i], 6)?;
                e.load_f64(src_base + 8 * (i as u64 + 1), s[i + 1], 7)?;
                next[i] = (s[i - 1] + s[i] + s[i + 1]) / 3.0;
            }
            bufs[dst] = next;
            e.ret(3)?;
        }
        e.ret(MAIN)
    }
}

/// `buf[i] = buf[i-1]` after `buf[0] = 1`, invoked from a calling loop.
struct ForwardCopy {
    len: u64,
    reps: u64,
}

impl ForwardCopy {
    const BUF: u64 = 0x2000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        Ok(ForwardCopy {
            len: p.u64("len", 8, 2)?,
            reps: p.u64("reps", 1, 1)?,
        })
    }
}

impl Program for ForwardCopy {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 30)
            .add_site(3, "cache_invalidate", "main.c", 31)
            .add_site(4, "cache_invalidate", "cache.c", 12)
            .add_site(5, "cache_invalidate", "cache.c", 13);
        m.add_loop(1, "main.c", 30, None).add_loop(2, "cache.c", 12, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        e.static_image(&[("cache_buf", Self::BUF, 4 * self.len)])?;
        e.call(MAIN)?;
        for _ in 0..self.reps {
            e.loop_head(1, 2)?;
            e.call(3)?;
            for i in 1..self.len {
                e.loop_head(2, 4)?;
                e.load_u32(Self::BUF + 4 * (i - 1), 1, 5)?;
            }
            e.ret(3)?;
        }
        e.ret(MAIN)
    }
}

/// A small callee reloading its spilled arguments on every call.
struct CalleeSpill {
    calls: u64,
}

impl CalleeSpill {
    const SP: u64 = 0x7fff_0000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        Ok(CalleeSpill {
            calls: p.u64("calls", 1000, 1)?,
        })
    }
}

impl Program for CalleeSpill {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 40)
            .add_site(3, "get_pixel", "main.c", 41)
            .add_site(4, "get_pixel", "img.c", 3)
            .add_site(5, "get_pixel", "img.c", 4)
            .add_site(6, "get_pixel", "img.c", 5)
            .add_site(7, "get_pixel", "img.c", 6);
        m.add_loop(1, "main.c", 40, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        e.call(MAIN)?;
        for y in 0..self.calls {
            e.loop_head(1, 2)?;
            e.call(3)?;
            e.load_u32(Self::SP, 7, 4)?;
            e.load_u32(Self::SP + 4, y as u32, 5)?;
            e.load_u32(Self::SP + 8, 480, 6)?;
            e.load_u32(Self::SP + 12, 640, 7)?;
            e.ret(3)?;
        }
        e.ret(MAIN)
    }
}

/// Weight update over mostly-zero arrays.
struct SparseZeros {
    len: u64,
    inner: u64,
    zero_density: f64,
    shuffle: bool,
    seed: u64,
}

impl SparseZeros {
    const DELTA: u64 = 0x10_0000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        Ok(SparseZeros {
            len: p.u64("len", 1000, 1)?,
            inner: p.u64("inner", 8, 1)?,
            zero_density: p.f64("zero_density", 0.9, 0.0, 1.0)?,
            shuffle: p.bool("shuffle", false)?,
            seed: p.u64("seed", 1, 0)?,
        })
    }
}

impl Program for SparseZeros {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "adjust_weights", "main.c", 60)
            .add_site(3, "adjust_weights", "weights.c", 10)
            .add_site(4, "adjust_weights", "weights.c", 11)
            .add_site(5, "adjust_weights", "weights.c", 12)
            .add_site(6, "adjust_weights", "weights.c", 13);
        m.add_loop(1, "weights.c", 10, None)
            .add_loop(2, "weights.c", 11, Some(1));
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let zd = self.zero_density;
        let sample = |rng: &mut ChaCha8Rng| -> f64 {
            if rng.gen_bool(zd) {
                0.0
            } else {
                1.5f64.powi(rng.gen_range(1..40))
            }
        };
        let delta: Vec<f64> = (0..self.len).map(|_| sample(&mut rng)).collect();
        let oldw: Vec<f64> = (0..self.len * self.inner).map(|_| sample(&mut rng)).collect();
        let mut order: Vec<u64> = (0..self.len).collect();
        if self.shuffle {
            order.shuffle(&mut rng);
        }
        e.static_image(&[("delta", Self::DELTA, 8 * self.len)])?;
        e.call(MAIN)?;
        e.alloc(HEAP, 8 * self.len * self.inner)?;
        e.call(2)?;
        for &j in &order {
            e.loop_head(1, 3)?;
            for k in 0..self.inner {
                e.loop_head(2, 4)?;
                e.load_f64(Self::DELTA + 8 * j, delta[j as usize], 5)?;
                let w = k * self.len + j;
                e.load_f64(HEAP + 8 * w, oldw[w as usize], 6)?;
            }
        }
        e.ret(2)?;
        e.free(HEAP)?;
        e.ret(MAIN)
    }
}

/// Repeated sweeps over an array whose values grow by a small factor.
struct ApproxDrift {
    len: u64,
    reps: u64,
    step: f64,
    seed: u64,
}

impl ApproxDrift {
    const X: u64 = 0x30_0000;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        Ok(ApproxDrift {
            len: p.u64("len", 1000, 1)?,
            reps: p.u64("reps", 100, 1)?,
            step: p.f64("step", 0.005, 0.0, 1.0)?,
            seed: p.u64("seed", 1, 0)?,
        })
    }
}

impl Program for ApproxDrift {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "main", "main.c", 70)
            .add_site(3, "relax", "main.c", 71)
            .add_site(4, "relax", "drift.c", 5)
            .add_site(5, "relax", "drift.c", 6);
        m.add_loop(1, "main.c", 70, None).add_loop(2, "drift.c", 5, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut x: Vec<f64> = (0..self.len).map(|_| rng.gen_range(1.0..10.0)).collect();
        e.static_image(&[("x", Self::X, 8 * self.len)])?;
        e.call(MAIN)?;
        for _ in 0..self.reps {
            e.loop_head(1, 2)?;
            e.call(3)?;
            for (i, v) in x.iter_mut().enumerate() {
                e.loop_head(2, 4)?;
                e.load_f64(Self::X + 8 * i as u64, *v, 5)?;
                *v *= 1.0 + self.step;
            }
            e.ret(3)?;
        }
        e.ret(MAIN)
    }
}

/// Random walk over loads, calls, returns, loop passes and object
/// lifetimes, on a small address and value set so spans overlap and values
/// repeat often.
struct RandomMixed {
    loads: u64,
    addresses: u64,
    values: u64,
    seed: u64,
    objects: bool,
    fp: bool,
    loop_weight: u64,
}

const INT_VALUES: [u64; 8] = [
    0,
    1,
    0x0101_0101_0101_0101,
    u64::MAX,
    0xdead_beef,
    2,
    0x0202_0202_0202_0202,
    3,
];
const FP_VALUES: [f64; 8] = [1.0, 1.004, 1.02, 0.0, f64::NAN, -0.0, f64::INFINITY, 2.0];

impl RandomMixed {
    const MEM: u64 = 0x1_0000;
    const FUNCS: [u32; 3] = [2, 3, 4];
    const LOAD_SITES: [u32; 4] = [5, 6, 7, 8];
    const LOOP_SITE: u32 = 9;
    const DYN_SLOTS: u64 = 2;

    fn new(p: &mut Params) -> Result<Self, GenError> {
        Ok(RandomMixed {
            loads: p.u64("loads", 10_000, 0)?,
            addresses: p.u64("addresses", 64, 1)?,
            values: p.u64("values", 4, 1)?.min(8),
            seed: p.u64("seed", 1, 0)?,
            objects: p.bool("objects", true)?,
            fp: p.bool("fp", true)?,
            loop_weight: p.u64("loop_weight", 15, 0)?.min(60),
        })
    }

    fn loop_parent(l: u32) -> Option<u32> {
        match l {
            2 => Some(1),
            3 => Some(2),
            _ => None,
        }
    }

    fn value(&self, rng: &mut ChaCha8Rng) -> (LoadValue, FpClass) {
        let fp = self.fp && rng.gen_bool(0.3);
        if fp {
            let pick = |rng: &mut ChaCha8Rng| FP_VALUES[rng.gen_range(0..self.values as usize)];
            match rng.gen_range(0..3) {
                0 => (LoadValue::from_f32(pick(rng) as f32), FpClass::F32),
                1 => (LoadValue::from_f64(pick(rng)), FpClass::F64),
                _ => {
                    let v = [pick(rng), pick(rng)];
                    (LoadValue::from_f64s(&v).expect("two lanes fit"), FpClass::F64)
                }
            }
        } else {
            let size = [1usize, 2, 4, 8, 16][rng.gen_range(0..5)];
            let v = INT_VALUES[rng.gen_range(0..self.values as usize)].to_le_bytes();
            let mut bytes = [0u8; 16];
            bytes[..8].copy_from_slice(&v);
            bytes[8..].copy_from_slice(&v);
            (
                LoadValue::new(&bytes[..size]).expect("size within bounds"),
                FpClass::NonFp,
            )
        }
    }
}

impl Program for RandomMixed {
    fn source_map(&self) -> SourceMap {
        let mut m = base_map();
        m.add_site(2, "f1", "mix.c", 10)
            .add_site(3, "f2", "mix.c", 20)
            .add_site(4, "f3", "mix.c", 30)
            .add_site(5, "mix", "mix.c", 40)
            .add_site(6, "mix", "mix.c", 41)
            .add_site(7, "mix", "mix.c", 42)
            .add_site(8, "mix", "mix.c", 43)
            .add_site(Self::LOOP_SITE, "mix", "mix.c", 50);
        m.add_loop(1, "mix.c", 100, None)
            .add_loop(2, "mix.c", 101, Some(1))
            .add_loop(3, "mix.c", 102, Some(2))
            .add_loop(4, "mix.c", 110, None);
        m
    }

    fn emit(&self, e: &mut Emitter) -> Result<(), GenError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let span = 2 * self.addresses + 16;
        let static_size = span / 2;
        let slot_size = (span - static_size) / Self::DYN_SLOTS;
        let slot_base = |k: u64| Self::MEM + static_size + k * slot_size;
        let mut live = [false; Self::DYN_SLOTS as usize];
        if self.objects {
            e.static_image(&[("S", Self::MEM, static_size)])?;
        }
        e.call(MAIN)?;
        // (call site, open loops innermost last)
        let mut frames: Vec<(u32, Vec<u32>)> = vec![(MAIN, Vec::new())];
        let mut emitted = 0;
        while emitted < self.loads {
            let r = rng.gen_range(0..100);
            let lw = self.loop_weight;
            if r < 60 {
                let addr = Self::MEM + 2 * rng.gen_range(0..self.addresses);
                let (value, fp) = self.value(&mut rng);
                let site = Self::LOAD_SITES[rng.gen_range(0..Self::LOAD_SITES.len())];
                e.load(addr, value, fp, site)?;
                emitted += 1;
            } else if r < 60 + lw {
                let open = &mut frames.last_mut().expect("main frame").1;
                let mut options: Vec<u32> = open.clone();
                options.extend([1, 4]);
                if let Some(&inner) = open.last() {
                    options.extend(
                        [2, 3]
                            .into_iter()
                            .filter(|&c| Self::loop_parent(c) == Some(inner)),
                    );
                }
                let l = options[rng.gen_range(0..options.len())];
                if let Some(pos) = open.iter().position(|&o| o == l) {
                    open.truncate(pos + 1);
                } else if Self::loop_parent(l).is_some() {
                    open.push(l);
                } else {
                    open.clear();
                    open.push(l);
                }
                e.loop_head(l, Self::LOOP_SITE)?;
            } else if r < 70 + lw {
                if frames.len() < 5 {
                    let site = Self::FUNCS[rng.gen_range(0..Self::FUNCS.len())];
                    frames.push((site, Vec::new()));
                    e.call(site)?;
                }
            } else if r < 80 + lw {
                if frames.len() > 1 {
                    let (site, _) = frames.pop().expect("len > 1");
                    e.ret(site)?;
                }
            } else if self.objects {
                let k = rng.gen_range(0..Self::DYN_SLOTS);
                if live[k as usize] {
                    e.free(slot_base(k))?;
                } else {
                    e.alloc(slot_base(k), slot_size)?;
                }
                live[k as usize] = !live[k as usize];
            }
        }
        while let Some((site, _)) = frames.pop() {
            e.ret(site)?;
        }
        Ok(())
    }
}
