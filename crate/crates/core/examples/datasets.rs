//! Writing and reading the supported on-disk formats, plus the synthetic
//! generators.

use sharppath::data::{load_cifar10_bin, load_idx, synth_gaussian, synth_images, write_cifar10_bin, write_idx, Split, SynthImageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("sharppath-datasets-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;

    // CIFAR-10 binary needs 32x32x3 images.
    let images = synth_images(&SynthImageConfig::new(10, 20, [32, 32, 3], 1))?;
    let cifar = dir.join("batch.bin");
    write_cifar10_bin(&images, &cifar)?;
    let back = load_cifar10_bin(std::slice::from_ref(&cifar), Split::Train)?;
    println!("CIFAR-10 binary: {} bytes, {} images, labels {:?}", std::fs::metadata(&cifar)?.len(), back.len(), &back.labels()[..5]);

    let gray = synth_images(&SynthImageConfig::new(4, 12, [6, 5, 1], 2))?;
    let (ip, lp) = (dir.join("images.idx"), dir.join("labels.idx"));
    write_idx(&gray, &ip, &lp)?;
    let back = load_idx(&ip, &lp, Split::Test)?;
    println!("IDX: {} images of shape {:?}", back.len(), back.example_shape());

    let blobs = synth_gaussian(3, 90, 5, 2.0, 3)?;
    println!("Gaussian blobs: {} examples, {} classes", blobs.len(), blobs.classes());

    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
