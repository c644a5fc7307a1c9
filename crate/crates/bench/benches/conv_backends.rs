use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nnfi_bench::reference_fixture;
use nnfi_core::engine::{conv2d_im2col, conv2d_naive};
use nnfi_core::synthetic::names;
use nnfi_core::{AccumMode, ConvBackend, Engine, EngineOptions, NoFaults};

fn conv_layers(c: &mut Criterion) {
    let (model, data) = reference_fixture(1);
    let conv2 = model.layer(names::CONV2).unwrap();
    let input = vec![17i8; conv2.input_len()];
    let mut out = vec![0i8; conv2.output_len()];
    let mut g = c.benchmark_group("conv2");
    g.bench_function("naive", |b| {
        b.iter(|| {
            conv2d_naive(
                black_box(&input),
                conv2,
                &mut out,
                AccumMode::Saturate,
                &mut NoFaults,
            )
            .unwrap()
        })
    });
    g.bench_function("im2col", |b| {
        b.iter(|| {
            conv2d_im2col(
                black_box(&input),
                conv2,
                &mut out,
                AccumMode::Saturate,
                &mut NoFaults,
            )
            .unwrap()
        })
    });
    g.finish();

    let mut g = c.benchmark_group("inference");
    for backend in [ConvBackend::Naive, ConvBackend::Im2col] {
        let engine = Engine::new(
            &model,
            EngineOptions {
                backend,
                ..Default::default()
            },
        );
        let mut arena = engine.new_arena(true);
        g.bench_function(format!("{backend:?}"), |b| {
            b.iter(|| {
                engine
                    .infer(black_box(&data[0].image), &mut arena, &mut NoFaults)
                    .unwrap()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, conv_layers);
criterion_main!(benches);
