//! Counter-based deterministic random streams.
//!
//! Every random decision in the crate is drawn from a [`Stream`] whose state
//! is a pure function of a domain tag plus integer coordinates (master seed,
//! step, prompt index, rollout index, ...). The t-th output of a stream is
//! `finalize(key + t * GAMMA)`, i.e. a counter-mode splitmix64, so results do
//! not depend on which worker thread evaluates which rollout or in what
//! order streams are consumed.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Domain tags keep unrelated stream families from colliding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Parameter initialization draws.
    Init,
    /// Task selection and construction during training.
    Task,
    /// Token sampling for one training rollout.
    Rollout,
    /// Token sampling for one evaluation rollout.
    Eval,
    /// Payload construction inside `make_task`.
    TaskPayload,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Init => 0x494E_4954,
            Domain::Task => 0x5441_534B,
            Domain::Rollout => 0x524F_4C4C,
            Domain::Eval => 0x4556_414C,
            Domain::TaskPayload => 0x5041_594C,
        }
    }
}

/// splitmix64 output finalizer.
#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes coordinate parts into a stream key. Order-sensitive on purpose:
/// (a, b) and (b, a) index different streams.
fn derive_key(domain: Domain, parts: &[u64]) -> u64 {
    let mut h = finalize(domain.tag().wrapping_add(GAMMA));
    for &p in parts {
        h = finalize(h ^ p.wrapping_add(GAMMA));
        h = h.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(29);
    }
    finalize(h)
}

/// One deterministic random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    /// Stream addressed by a domain and integer coordinates.
    pub fn keyed(domain: Domain, parts: &[u64]) -> Self {
        Stream {
            key: derive_key(domain, parts),
            counter: 0,
        }
    }

    /// Next raw 64-bit draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let c = self.counter;
        self.counter += 1;
        finalize(self.key.wrapping_add(c.wrapping_mul(GAMMA)).wrapping_add(GAMMA))
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in (0, 1], safe as a log argument.
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) via 128-bit multiply (bound > 0).
    #[inline]
    pub fn next_below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        ((self.next_u64() as u128 * bound as u128) >> 64) as u64
    }

    /// Uniform integer in the inclusive range [lo, hi].
    pub fn next_in_range(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + self.next_below(hi - lo + 1)
    }

    /// Standard normal draw (Box-Muller; consumes two uniforms every call so
    /// the draw count stays a pure function of call count).
    pub fn next_gauss(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}
