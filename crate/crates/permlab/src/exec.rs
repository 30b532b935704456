use permlab_core::Executor;
use rayon::prelude::*;

/// Runs replicates on a dedicated rayon pool.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    /// `threads == 0` uses every available core.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        // Indexed parallel collect writes each result to its own slot.
        self.pool.install(|| (0..len).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use permlab_core::Sequential;

    #[test]
    fn preserves_order() {
        let ex = RayonExecutor::new(4).unwrap();
        let f = |i: usize| i * i + 1;
        assert_eq!(ex.map_indexed(1000, f), Sequential.map_indexed(1000, f));
    }
}
