#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dstc/matrix.hpp"
#include "dstc/rng.hpp"

namespace dstc {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

// Aligned features for two modalities plus class labels. Immutable after
// construction; concurrent read-only access is fine.
struct PairedDataset {
    DenseMatrix x;                   // N x d1
    DenseMatrix y;                   // N x d2
    std::vector<int> labels;         // values in [0, num_classes)
    int num_classes = 0;
    std::vector<std::uint8_t> split; // one tag per sample

    std::size_t size() const { return labels.size(); }
    std::size_t dim_x() const { return x.cols; }
    std::size_t dim_y() const { return y.cols; }
};

// A minibatch view materialized from dataset indices.
struct Batch {
    DenseMatrix x;
    DenseMatrix y;
    std::vector<int> labels;
    int num_classes = 0;

    std::size_t size() const { return labels.size(); }
};

struct SyntheticSpec {
    int num_classes = 10;
    int samples_per_class = 100;
    std::size_t dim_x = 64;
    std::size_t dim_y = 48;
    double cluster_spread = 0.15;
    double pair_noise = 0.0; // fraction of pairs re-matched within class
    std::uint64_t seed = 0;
};

// Per class, independent centroids are drawn for each modality from a unit
// normal; samples are centroid + spread * normal noise. Pairs at the same
// index share a class; pair_noise re-pairs that fraction within each class.
// Split is 70/15/15 stratified by class. Deterministic given seed.
PairedDataset generate_synthetic(const SyntheticSpec& spec);

// Inverse class frequency weights: weight of sample i = 1/count(class(i)).
std::vector<double> sampler_weights(const std::vector<int>& labels, int num_classes);

// batch_size indices drawn independently with replacement, p proportional
// to weight.
std::vector<std::size_t> sample_batch(const std::vector<double>& weights, std::size_t batch_size, Rng& rng);

std::vector<std::size_t> split_indices(const PairedDataset& data, Split split);

Batch make_batch(const PairedDataset& data, const std::vector<std::size_t>& indices);

DenseMatrix one_hot(const std::vector<int>& labels, int num_classes);

// Binary feature file: magic "DSTCFEAT", u32 version=1, u32 n, u32 d, then
// n*d little-endian binary32 values, row-major. Values are truncated to
// 32-bit on save.
void save_features(const std::string& path, const DenseMatrix& m);
DenseMatrix load_features(const std::string& path);

// Labels file: magic "DSTCLABL", u32 version=1, u32 n, u32 C, then n u32
// class indices.
void save_labels(const std::string& path, const std::vector<int>& labels, int num_classes);
struct LabelData {
    std::vector<int> labels;
    int num_classes = 0;
};
LabelData load_labels(const std::string& path);

// Split file: n raw bytes, 0=train, 1=val, 2=test.
void save_split(const std::string& path, const std::vector<std::uint8_t>& split);
std::vector<std::uint8_t> load_split(const std::string& path);

// Manifest: key=value lines naming the feature/label paths (keys x, y,
// labels, split; split optional). Relative paths resolve against the
// manifest's directory.
struct Manifest {
    std::string x_path;
    std::string y_path;
    std::string labels_path;
    std::string split_path; // empty when absent
};
void save_manifest(const std::string& path, const Manifest& manifest);
Manifest load_manifest(const std::string& path);

// Writes all dataset files plus the manifest into a directory; returns the
// manifest path.
std::string save_dataset(const std::string& dir, const PairedDataset& data);
PairedDataset load_dataset(const std::string& manifest_path);

} // namespace dstc
