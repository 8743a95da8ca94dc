//! Order-preserving parallel map over owned work items.
//!
//! Thread count comes from PAIRLEARN_THREADS (falling back to the machine
//! parallelism). Results are written into preallocated slots, so the output
//! order and values are identical for every thread count.

pub(crate) fn thread_count() -> usize {
    std::env::var("PAIRLEARN_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub(crate) fn parallel_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync,
{
    let threads = thread_count();
    let n = items.len();
    if threads <= 1 || n <= 1 {
        return items.into_iter().map(f).collect();
    }
    let chunk = n.div_ceil(threads);
    let mut slots: Vec<Option<U>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);
    std::thread::scope(|scope| {
        let f = &f;
        let mut remaining_items = items;
        let mut remaining_slots = &mut slots[..];
        while !remaining_items.is_empty() {
            let take = chunk.min(remaining_items.len());
            let tail_items = remaining_items.split_off(take);
            let head_items = remaining_items;
            remaining_items = tail_items;
            let taken = std::mem::take(&mut remaining_slots);
            let (head_slots, tail_slots) = taken.split_at_mut(take);
            remaining_slots = tail_slots;
            scope.spawn(move || {
                for (slot, item) in head_slots.iter_mut().zip(head_items) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled by its chunk"))
        .collect()
}
