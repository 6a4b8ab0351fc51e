//! Turn `perf stat -x,` output into a profile sample and normalize it.

use perfdiag::ingest::{normalize, parse_perf_stat, RunMeta};
use perfdiag::profile::{CounterSpec, VersionTag};

const OUTPUT: &str = "\
# started on Tue Mar  4 10:12:01 2025

48211930,,cycles:u,20013540,100.00,,
61388120,,instructions:u,20013540,100.00,1.27,insn per cycle
13204,,cache-misses:u,20013540,100.00,,
977,,mem_load_l3_hit_retired.xsnp_hitm:u,20013540,100.00,,
";

fn main() -> perfdiag::Result<()> {
    let spec = CounterSpec::parse_list(
        "cycles, core cycles\n\
         cache-misses, last level cache misses\n\
         mem_load_l3_hit_retired.xsnp_hitm, loads hitting a modified line in another core\n",
    )?;
    let meta = RunMeta {
        program: "kv-store".into(),
        version: VersionTag::parse("new:abc123").map_err(perfdiag::Error::Config)?,
        function: "flush_batch".into(),
        run_id: "ci-1742".into(),
        thread_count: 4,
        instruction_count: None,
    };
    let set = parse_perf_stat(OUTPUT.as_bytes(), &spec, &meta)?;
    let sample = &set.samples[0];
    println!("{} instructions on {} threads", sample.instruction_count, sample.thread_count);
    let norm = normalize(&set)?;
    for (name, v) in spec.names().zip(norm.samples[0].values.as_normalized().expect("normalized")) {
        println!("{name:<40} {v:.3e} per instruction per thread");
    }

    let broken = OUTPUT.replace("13204,,cache-misses:u", "<not counted>,,cache-misses:u");
    match parse_perf_stat(broken.as_bytes(), &spec, &meta) {
        Err(e) => println!("multiplexed-out event is rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
