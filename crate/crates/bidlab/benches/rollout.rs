//! Parallel vs sequential episode rollout throughput.

fn main() {}
