//! ASCII map of a generated plan with the cells a 2000-step walk visits.
//! `cargo run --example plan_map -- <seed>`
use ess_core::env::*;
fn main() {
    let seed: u64 = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let plan = generate_floorplan(seed, &PlanParams::default()).unwrap();
    let t = random_walk(&plan, 2000, &MotionParams::default(), seed).unwrap();
    let mut visits = vec![0usize; plan.width * plan.height];
    for p in t.poses() {
        let (x, y) = plan.cell_at(p.x(), p.y()).unwrap();
        visits[y * plan.width + x] += 1;
    }
    for y in (0..plan.height).rev() {
        let row: String = (0..plan.width)
            .map(|x| match plan.cell(x, y) {
                Cell::Wall(_) => '#',
                Cell::Object(_) => 'o',
                Cell::Empty => {
                    if visits[y * plan.width + x] > 0 { '.' } else { ' ' }
                }
            })
            .collect();
        println!("{row}");
    }
}
