use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuildError, ThreadPoolBuilder};

use crate::backend::PolicyBackend;

/// The ordered policy models `{π_1, …, π_K}` plus the pool that bounds how
/// many backend calls are in flight at once.
#[derive(Clone)]
pub struct Ensemble {
    members: Vec<Arc<dyn PolicyBackend>>,
    pool: Option<Arc<ThreadPool>>,
}

impl std::fmt::Debug for Ensemble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ensemble")
            .field("members", &self.names())
            .field("max_in_flight", &self.pool.as_ref().map(|p| p.current_num_threads()))
            .finish()
    }
}

impl Ensemble {
    /// Calls run one after another on the calling thread.
    pub fn sequential(members: Vec<Arc<dyn PolicyBackend>>) -> Self {
        Self { members, pool: None }
    }

    /// Calls fan out over a dedicated pool of `max_in_flight` threads.
    pub fn concurrent(
        members: Vec<Arc<dyn PolicyBackend>>,
        max_in_flight: usize,
    ) -> Result<Self, ThreadPoolBuildError> {
        let pool = ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .thread_name(|i| format!("comcts-backend-{i}"))
            .build()?;
        Ok(Self { members, pool: Some(Arc::new(pool)) })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Arc<dyn PolicyBackend>] {
        &self.members
    }

    pub fn names(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.name()).collect()
    }

    /// The first `k` members, sharing this ensemble's pool.
    pub fn prefix(&self, k: usize) -> Self {
        Self {
            members: self.members[..k.min(self.members.len())].to_vec(),
            pool: self.pool.clone(),
        }
    }

    /// Maps `f` over `items`, preserving order.
    pub(crate) fn fan_out<T, R, F>(&self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Sync + Send,
    {
        match &self.pool {
            Some(pool) if items.len() > 1 => pool.install(|| items.into_par_iter().map(f).collect()),
            _ => items.into_iter().map(f).collect(),
        }
    }
}
