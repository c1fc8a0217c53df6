//! Operation counting for inference and update passes.
//!
//! Convention: a multiply-add counts as 2 FLOPs; a single add/mul/div, a
//! comparison (including `abs`/`max`), and each exp, log, erf, sqrt or tanh
//! count as 1.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mul_add: u64,
    pub arith: u64,
    pub transcendental: u64,
    pub compare: u64,
}

impl OpCounts {
    pub fn flops(&self) -> u64 {
        2 * self.mul_add + self.arith + self.transcendental + self.compare
    }

    fn add(&mut self, other: &OpCounts) {
        self.mul_add += other.mul_add;
        self.arith += other.arith;
        self.transcendental += other.transcendental;
        self.compare += other.compare;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Phase {
    #[default]
    Inference,
    Update,
}

/// Monotone counters scoped by phase.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlopCounter {
    phase: Phase,
    inference: OpCounts,
    update: OpCounts,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Switches the phase that subsequent operations are charged to.
    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Zeroes one phase's counters. Only call at phase boundaries.
    pub fn reset(&mut self, phase: Phase) {
        *self.slot(phase) = OpCounts::default();
    }

    pub fn counts(&self, phase: Phase) -> OpCounts {
        match phase {
            Phase::Inference => self.inference,
            Phase::Update => self.update,
        }
    }

    pub fn flops(&self, phase: Phase) -> u64 {
        self.counts(phase).flops()
    }

    fn slot(&mut self, phase: Phase) -> &mut OpCounts {
        match phase {
            Phase::Inference => &mut self.inference,
            Phase::Update => &mut self.update,
        }
    }

    fn current(&mut self) -> &mut OpCounts {
        let p = self.phase;
        self.slot(p)
    }

    #[inline]
    pub fn mul_add(&mut self, n: u64) {
        self.current().mul_add += n;
    }

    #[inline]
    pub fn arith(&mut self, n: u64) {
        self.current().arith += n;
    }

    #[inline]
    pub fn transcendental(&mut self, n: u64) {
        self.current().transcendental += n;
    }

    #[inline]
    pub fn compare(&mut self, n: u64) {
        self.current().compare += n;
    }

    /// Adds another counter's totals phase by phase.
    pub fn absorb(&mut self, other: &FlopCounter) {
        self.inference.add(&other.inference);
        self.update.add(&other.update);
    }
}
