use std::io::Write;
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use gaborcnn::data::{batches, encode_idx, load_idx, load_mnist, parse_idx, write_idx, IdxArray};
use gaborcnn::Error;
use proptest::prelude::*;

fn arrays() -> impl Strategy<Value = IdxArray> {
    prop::collection::vec(1usize..6, 1..4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        (Just(dims), prop::collection::vec(any::<u8>(), n))
            .prop_map(|(dims, data)| IdxArray { dims, data })
    })
}

fn offset_of(e: Error) -> u64 {
    match e {
        Error::Ingestion { offset, .. } => offset,
        other => panic!("expected ingestion error, got {other}"),
    }
}

proptest! {
    #[test]
    fn idx_round_trip(a in arrays()) {
        prop_assert_eq!(parse_idx(&encode_idx(&a), Path::new("mem")).unwrap(), a);
    }

    #[test]
    fn truncation_is_reported(a in arrays(), cut in 1usize..8) {
        let bytes = encode_idx(&a);
        let cut = cut.min(bytes.len());
        prop_assert!(parse_idx(&bytes[..bytes.len() - cut], Path::new("mem")).is_err());
    }

    #[test]
    fn batches_cover_a_permutation(len in 0usize..300, batch in 1usize..64, seed in 0u64..1000, epoch in 0usize..5) {
        let b = batches(len, batch, seed, epoch).unwrap();
        prop_assert!(b.iter().all(|c| c.len() <= batch && !c.is_empty()));
        prop_assert_eq!(b.len(), len.div_ceil(batch));
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert_eq!(&b, &batches(len, batch, seed, epoch).unwrap());
    }
}

#[test]
fn epochs_reshuffle() {
    assert_ne!(batches(100, 10, 3, 0).unwrap(), batches(100, 10, 3, 1).unwrap());
    assert!(batches(10, 0, 3, 0).is_err());
}

#[test]
fn bad_headers_name_an_offset() {
    let p = Path::new("bad");
    assert_eq!(offset_of(parse_idx(&[0, 0], p).unwrap_err()), 2);
    assert_eq!(offset_of(parse_idx(&[1, 0, 8, 1, 0, 0, 0, 0], p).unwrap_err()), 0);
    assert_eq!(offset_of(parse_idx(&[0, 0, 9, 1, 0, 0, 0, 0], p).unwrap_err()), 2);
    assert_eq!(offset_of(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 7, 7, 7], p).unwrap_err()), 10);
}

#[test]
fn gzip_and_plain_files_load_alike() {
    let dir = tempfile::tempdir().unwrap();
    let a = IdxArray { dims: vec![2, 3], data: (0..6).collect() };
    let plain = dir.path().join("a.idx");
    write_idx(&plain, &a).unwrap();
    let gz = dir.path().join("a.idx.gz");
    let mut enc = GzEncoder::new(std::fs::File::create(&gz).unwrap(), Compression::default());
    enc.write_all(&encode_idx(&a)).unwrap();
    enc.finish().unwrap();
    assert_eq!(load_idx(&plain).unwrap(), a);
    assert_eq!(load_idx(&gz).unwrap(), a);
}

#[test]
fn mnist_layout_loads_from_gzip_names() {
    let dir = tempfile::tempdir().unwrap();
    let put = |name: &str, a: &IdxArray| {
        let mut enc = GzEncoder::new(
            std::fs::File::create(dir.path().join(format!("{name}.gz"))).unwrap(),
            Compression::fast(),
        );
        enc.write_all(&encode_idx(a)).unwrap();
        enc.finish().unwrap();
    };
    let img = |n: usize| IdxArray { dims: vec![n, 28, 28], data: vec![128; n * 784] };
    let lab = |n: usize| IdxArray { dims: vec![n], data: (0..n).map(|i| (i % 10) as u8).collect() };
    put("train-images-idx3-ubyte", &img(4));
    put("train-labels-idx1-ubyte", &lab(4));
    put("t10k-images-idx3-ubyte", &img(2));
    put("t10k-labels-idx1-ubyte", &lab(2));
    let (tr, te) = load_mnist(dir.path()).unwrap();
    assert_eq!((tr.len(), te.len()), (4, 2));
    assert_eq!(tr.side(), (28, 28));
    assert_eq!(tr.labels, vec![0, 1, 2, 3]);
}

#[test]
fn missing_mnist_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_mnist(dir.path()), Err(Error::Io { .. })));
}

#[test]
fn label_count_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, a: IdxArray| write_idx(&dir.path().join(name), &a).unwrap();
    write("train-images-idx3-ubyte", IdxArray { dims: vec![3, 28, 28], data: vec![0; 3 * 784] });
    write("train-labels-idx1-ubyte", IdxArray { dims: vec![2], data: vec![0, 1] });
    write("t10k-images-idx3-ubyte", IdxArray { dims: vec![1, 28, 28], data: vec![0; 784] });
    write("t10k-labels-idx1-ubyte", IdxArray { dims: vec![1], data: vec![0] });
    assert!(load_mnist(dir.path()).is_err());
}
