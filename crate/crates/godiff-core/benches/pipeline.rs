//! Benchmarks for the data-parallel stages.
//!
//! With the default `parallel` feature each workload runs twice: inside a
//! single-thread pool (the sequential baseline) and on the default pool.
//! Building with `--no-default-features` benches the fallback path that has
//! no rayon in it at all.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use godiff_core::csn::{toy_backbone_forward, CsnPolicy, FeatureMap};
use godiff_core::dataset::{synth_toy_dataset, DomainDataset, SynthParams};
use godiff_core::eval::mmd2;
use godiff_core::filter::{Embedder, Embedding, StubEmbedder};
use godiff_core::prompt::{DescriptorSets, StubTagger};
use godiff_core::ptdg::{generate_pseudo_domain, GeneratorConfig, ProceduralGenerator, StyleDomainSpec, StyleParams};
use godiff_core::rng::DetRng;

fn toy_source(n_images: usize, side: u32) -> DomainDataset {
    synth_toy_dataset(&SynthParams {
        seed: 7,
        n_images,
        width: side,
        height: side,
        min_boxes: 2,
        max_boxes: 3,
        categories: vec!["car".into(), "person".into()],
        domain: "daytime-sunny".into(),
    })
    .unwrap()
}

fn fog_spec() -> StyleDomainSpec {
    StyleDomainSpec {
        name: "daytime-foggy".into(),
        domain_tags: godiff_core::prompt::TagSet::from_tags(["daytime", "foggy"]),
        params: StyleParams {
            gain: [1.0, 1.0, 1.0],
            bias: 0.0,
            gamma: 1.0,
            fog_alpha: 0.5,
            noise_sigma: 0.01,
        },
    }
}

fn random_embeddings(seed: u64, n: usize) -> Vec<Embedding> {
    let mut rng = DetRng::new(seed);
    (0..n)
        .map(|_| Embedding::new((0..18).map(|_| rng.next_unit()).collect()).unwrap())
        .collect()
}

fn random_batch(n: usize, side: usize) -> Vec<FeatureMap> {
    (0..n as u64)
        .map(|s| {
            let mut rng = DetRng::new(s);
            FeatureMap::new(3, side, side, (0..3 * side * side).map(|_| rng.next_unit()).collect())
                .unwrap()
        })
        .collect()
}

/// Runs `f` under a pinned-size rayon pool when parallel, or directly when
/// the sequential fallback is compiled in.
fn with_threads<R>(n: usize, f: impl FnOnce() -> R + Send) -> R
where
    R: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        f()
    }
}

fn thread_counts() -> Vec<usize> {
    #[cfg(feature = "parallel")]
    {
        vec![1, rayon::current_num_threads().max(2)]
    }
    #[cfg(not(feature = "parallel"))]
    {
        vec![1]
    }
}

fn bench_generate(c: &mut Criterion) {
    let source = toy_source(16, 64);
    let sets = DescriptorSets::default();
    let spec = fog_spec();
    let cfg = GeneratorConfig::new("procedural", 7);
    let mut group = c.benchmark_group("generate_pseudo_domain");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| {
                with_threads(t, || {
                    generate_pseudo_domain(
                        &source,
                        &spec,
                        &sets,
                        &StubTagger,
                        &ProceduralGenerator,
                        &cfg,
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_mmd2(c: &mut Criterion) {
    let a = random_embeddings(1, 200);
    let b = random_embeddings(2, 200);
    let mut group = c.benchmark_group("mmd2_200x200");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |bch, &t| {
            bch.iter(|| with_threads(t, || mmd2(&a, &b, 0.5).unwrap()))
        });
    }
    group.finish();
}

fn bench_backbone(c: &mut Criterion) {
    let batch = random_batch(8, 64);
    let policy = CsnPolicy {
        probability: 0.5,
        max_active: 2,
        epsilon: 1e-5,
    };
    let mut group = c.benchmark_group("toy_backbone_forward");
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || toy_backbone_forward(&batch, 11, &policy, 22).unwrap()))
        });
    }
    group.finish();
}

fn bench_embed(c: &mut Criterion) {
    let source = toy_source(16, 64);
    let mut group = c.benchmark_group("embed_regions");
    group.bench_function("stub", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for img in &source.images {
                for ann in &img.annotations {
                    let crop = godiff_core::dataset::crop(&img.raster, &ann.bbox).unwrap();
                    acc += StubEmbedder.embed(&crop).unwrap().values[0];
                }
            }
            acc
        })
    });
    group.finish();
}

criterion_group!(benches, bench_generate, bench_mmd2, bench_backbone, bench_embed);
criterion_main!(benches);
