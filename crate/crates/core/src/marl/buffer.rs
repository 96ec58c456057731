use rand::Rng;

/// One stored step. Actions are the executed (noisy, clipped) env forces.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a1: f64,
    pub a2: f64,
    pub r: f64,
    pub s2: Vec<f64>,
    pub done: bool,
}

/// Minibatch in row-major, graph-ready form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs_dim: usize,
    pub s: Vec<f64>,
    pub a1: Vec<f64>,
    pub a2: Vec<f64>,
    pub r: Vec<f64>,
    pub s2: Vec<f64>,
    pub done: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn from_transitions(obs_dim: usize, items: &[Transition]) -> Self {
        let mut b = Batch::with_capacity(obs_dim, items.len());
        for t in items {
            b.push(t);
        }
        b
    }

    fn with_capacity(obs_dim: usize, n: usize) -> Self {
        Self {
            obs_dim,
            s: Vec::with_capacity(n * obs_dim),
            a1: Vec::with_capacity(n),
            a2: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            s2: Vec::with_capacity(n * obs_dim),
            done: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, t: &Transition) {
        assert_eq!(t.s.len(), self.obs_dim, "state width");
        assert_eq!(t.s2.len(), self.obs_dim, "next-state width");
        self.s.extend_from_slice(&t.s);
        self.a1.push(t.a1);
        self.a2.push(t.a2);
        self.r.push(t.r);
        self.s2.extend_from_slice(&t.s2);
        self.done.push(t.done);
    }
}

/// Fixed-capacity FIFO ring with uniform sampling over written slots.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    obs_dim: usize,
    capacity: usize,
    items: Vec<Transition>,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            obs_dim,
            capacity,
            items: Vec::new(),
            pushed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of transitions ever pushed.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        assert_eq!(t.s.len(), self.obs_dim, "state width");
        assert!(t.r.is_finite(), "non-finite reward");
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            let slot = (self.pushed % self.capacity as u64) as usize;
            self.items[slot] = t;
        }
        self.pushed += 1;
    }

    /// Oldest transition still stored.
    pub fn oldest(&self) -> Option<&Transition> {
        if self.items.len() < self.capacity {
            self.items.first()
        } else {
            self.items.get((self.pushed % self.capacity as u64) as usize)
        }
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Batch {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        let mut b = Batch::with_capacity(self.obs_dim, n);
        for _ in 0..n {
            b.push(&self.items[rng.random_range(0..self.items.len())]);
        }
        b
    }
}
