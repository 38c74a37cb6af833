use sympal::{systems, action::{SearchConfig, find_critical_points}};
fn main() {
    let map = systems::sys_d();
    let cfg = SearchConfig { grid_per_dim: 4, ..SearchConfig::with_seed(7) };
    let mut total = std::time::Duration::ZERO;
    for p in 1usize..=8 {
        let t0 = std::time::Instant::now();
        match find_critical_points(&map, p, &cfg) {
            Ok(res) => {
                let dt = t0.elapsed(); total += dt;
                let ok = res.records.iter().all(|r| r.morse_index as i64 - (2*2*p) as i64 == r.maslov);
                println!("p={p}: {} orbits, index-theorem {}, {:?}", res.records.len(), if ok {"OK"} else {"VIOLATED"}, dt);
            }
            Err(e) => { total += t0.elapsed(); println!("p={p}: ERROR {e}"); }
        }
    }
    println!("total {total:?}");
}
