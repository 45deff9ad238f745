//! Bounded-width parallel map with order-stable results.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item using up to `concurrency` worker threads.
/// Results come back in input order regardless of completion order, so
/// parallel and serial runs produce identical output.
///
/// A panic in `f` propagates to the caller when the scope joins.
pub fn parallel_map_ordered<T, R, F>(items: &[T], concurrency: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    assert!(concurrency >= 1, "concurrency must be at least 1");
    if items.is_empty() {
        return Vec::new();
    }
    let workers = concurrency.min(items.len());
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let result = f(i, &items[i]);
                *slots[i].lock().expect("slot lock") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| {
            slot.into_inner()
                .expect("slot lock")
                .expect("every slot filled before scope exit")
        })
        .collect()
}
