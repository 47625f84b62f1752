#include "dstc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace dstc {

namespace {

constexpr char kFeatureMagic[8] = {'D', 'S', 'T', 'C', 'F', 'E', 'A', 'T'};
constexpr char kLabelMagic[8] = {'D', 'S', 'T', 'C', 'L', 'A', 'B', 'L'};
constexpr std::uint32_t kFileVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {
        static_cast<char>(v & 0xff),
        static_cast<char>((v >> 8) & 0xff),
        static_cast<char>((v >> 16) & 0xff),
        static_cast<char>((v >> 24) & 0xff),
    };
    os.write(bytes, 4);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4)) {
        throw IoError(IoError::Kind::Truncated, "truncated file while reading " + what);
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

float read_f32(std::istream& is, const std::string& what) {
    const std::uint32_t bits = read_u32(is, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void check_magic(std::istream& is, const char (&magic)[8], const std::string& path) {
    char buf[8];
    if (!is.read(buf, 8)) {
        throw IoError(IoError::Kind::Truncated, "truncated file while reading magic: " + path);
    }
    if (std::memcmp(buf, magic, 8) != 0) {
        throw IoError(IoError::Kind::BadMagic, "bad magic in " + path);
    }
}

void check_version(std::istream& is, const std::string& path) {
    const std::uint32_t version = read_u32(is, "version");
    if (version != kFileVersion) {
        throw IoError(IoError::Kind::BadVersion,
                      "unsupported version " + std::to_string(version) + " in " + path);
    }
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for writing: " + path);
    }
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for reading: " + path);
    }
    return is;
}

} // namespace

PairedDataset generate_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes <= 0 || spec.samples_per_class <= 0 || spec.dim_x == 0 || spec.dim_y == 0) {
        throw ConfigError("generate_synthetic: counts and dims must be positive");
    }
    if (spec.cluster_spread <= 0.0) {
        throw ConfigError("generate_synthetic: cluster_spread must be positive");
    }
    if (spec.pair_noise < 0.0 || spec.pair_noise > 1.0) {
        throw ConfigError("generate_synthetic: pair_noise must lie in [0,1]");
    }

    const std::size_t n = static_cast<std::size_t>(spec.num_classes) * static_cast<std::size_t>(spec.samples_per_class);
    Rng rng(spec.seed);
    Rng centroid_rng = rng.fork(1);
    Rng sample_rng = rng.fork(2);
    Rng pair_rng = rng.fork(3);
    Rng split_rng = rng.fork(4);

    DenseMatrix centroids_x(static_cast<std::size_t>(spec.num_classes), spec.dim_x);
    DenseMatrix centroids_y(static_cast<std::size_t>(spec.num_classes), spec.dim_y);
    for (double& v : centroids_x.data) {
        v = centroid_rng.next_normal();
    }
    for (double& v : centroids_y.data) {
        v = centroid_rng.next_normal();
    }

    PairedDataset data;
    data.num_classes = spec.num_classes;
    data.x = DenseMatrix(n, spec.dim_x);
    data.y = DenseMatrix(n, spec.dim_y);
    data.labels.resize(n);
    data.split.resize(n);

    std::size_t row = 0;
    for (int c = 0; c < spec.num_classes; ++c) {
        for (int s = 0; s < spec.samples_per_class; ++s, ++row) {
            data.labels[row] = c;
            for (std::size_t j = 0; j < spec.dim_x; ++j) {
                data.x(row, j) = centroids_x(static_cast<std::size_t>(c), j) +
                                 spec.cluster_spread * sample_rng.next_normal();
            }
            for (std::size_t j = 0; j < spec.dim_y; ++j) {
                data.y(row, j) = centroids_y(static_cast<std::size_t>(c), j) +
                                 spec.cluster_spread * sample_rng.next_normal();
            }
        }
    }

    // Re-pair a fraction of each class: shuffle the y rows among the chosen
    // subset so those x/y pairs no longer come from the same draw.
    if (spec.pair_noise > 0.0) {
        for (int c = 0; c < spec.num_classes; ++c) {
            std::vector<std::size_t> members;
            for (std::size_t i = 0; i < n; ++i) {
                if (data.labels[i] == c) {
                    members.push_back(i);
                }
            }
            for (std::size_t i = members.size(); i > 1; --i) {
                std::swap(members[i - 1], members[pair_rng.next_index(i)]);
            }
            const std::size_t k = static_cast<std::size_t>(
                std::llround(spec.pair_noise * static_cast<double>(members.size())));
            if (k < 2) {
                continue;
            }
            // Cyclic shift of the chosen y rows guarantees re-pairing.
            std::vector<double> first_row(data.y.row(members[0]).begin(), data.y.row(members[0]).end());
            for (std::size_t i = 0; i + 1 < k; ++i) {
                auto dst = data.y.row(members[i]);
                auto src = data.y.row(members[i + 1]);
                std::copy(src.begin(), src.end(), dst.begin());
            }
            std::copy(first_row.begin(), first_row.end(), data.y.row(members[k - 1]).begin());
        }
    }

    // Stratified 70/15/15 split.
    for (int c = 0; c < spec.num_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < n; ++i) {
            if (data.labels[i] == c) {
                members.push_back(i);
            }
        }
        for (std::size_t i = members.size(); i > 1; --i) {
            std::swap(members[i - 1], members[split_rng.next_index(i)]);
        }
        const std::size_t n_train = static_cast<std::size_t>(0.70 * static_cast<double>(members.size()));
        const std::size_t n_val = static_cast<std::size_t>(0.15 * static_cast<double>(members.size()));
        for (std::size_t i = 0; i < members.size(); ++i) {
            std::uint8_t tag = 2;
            if (i < n_train) {
                tag = 0;
            } else if (i < n_train + n_val) {
                tag = 1;
            }
            data.split[members[i]] = tag;
        }
    }

    return data;
}

std::vector<double> sampler_weights(const std::vector<int>& labels, int num_classes) {
    if (labels.empty()) {
        throw ConfigError("sampler_weights: labels must be non-empty");
    }
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int label : labels) {
        if (label < 0 || label >= num_classes) {
            throw ConfigError("sampler_weights: label " + std::to_string(label) + " out of range [0," +
                              std::to_string(num_classes) + ")");
        }
        ++counts[static_cast<std::size_t>(label)];
    }
    std::vector<double> weights(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        weights[i] = 1.0 / static_cast<double>(counts[static_cast<std::size_t>(labels[i])]);
    }
    return weights;
}

std::vector<std::size_t> sample_batch(const std::vector<double>& weights, std::size_t batch_size, Rng& rng) {
    if (batch_size == 0) {
        throw ConfigError("sample_batch: batch_size must be >= 1");
    }
    std::vector<double> cumulative(weights.size());
    double total = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] < 0.0) {
            throw ConfigError("sample_batch: weights must be non-negative");
        }
        total += weights[i];
        cumulative[i] = total;
    }
    if (total <= 0.0) {
        throw ConfigError("sample_batch: all weights are zero");
    }
    std::vector<std::size_t> indices(batch_size);
    for (std::size_t b = 0; b < batch_size; ++b) {
        const double u = rng.next_double() * total;
        const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
        indices[b] = std::min(static_cast<std::size_t>(it - cumulative.begin()), weights.size() - 1);
    }
    return indices;
}

std::vector<std::size_t> split_indices(const PairedDataset& data, Split split) {
    std::vector<std::size_t> indices;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split[i] == static_cast<std::uint8_t>(split)) {
            indices.push_back(i);
        }
    }
    return indices;
}

Batch make_batch(const PairedDataset& data, const std::vector<std::size_t>& indices) {
    Batch batch;
    batch.num_classes = data.num_classes;
    batch.x = DenseMatrix(indices.size(), data.dim_x());
    batch.y = DenseMatrix(indices.size(), data.dim_y());
    batch.labels.resize(indices.size());
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const std::size_t i = indices[b];
        auto xs = data.x.row(i);
        auto ys = data.y.row(i);
        std::copy(xs.begin(), xs.end(), batch.x.row(b).begin());
        std::copy(ys.begin(), ys.end(), batch.y.row(b).begin());
        batch.labels[b] = data.labels[i];
    }
    return batch;
}

DenseMatrix one_hot(const std::vector<int>& labels, int num_classes) {
    DenseMatrix z(labels.size(), static_cast<std::size_t>(num_classes));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) {
            throw ConfigError("one_hot: label out of range");
        }
        z(i, static_cast<std::size_t>(labels[i])) = 1.0;
    }
    return z;
}

void save_features(const std::string& path, const DenseMatrix& m) {
    std::ofstream os = open_out(path);
    os.write(kFeatureMagic, 8);
    write_u32(os, kFileVersion);
    write_u32(os, static_cast<std::uint32_t>(m.rows));
    write_u32(os, static_cast<std::uint32_t>(m.cols));
    for (double v : m.data) {
        write_f32(os, static_cast<float>(v));
    }
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

DenseMatrix load_features(const std::string& path) {
    std::ifstream is = open_in(path);
    check_magic(is, kFeatureMagic, path);
    check_version(is, path);
    const std::uint32_t n = read_u32(is, "row count");
    const std::uint32_t d = read_u32(is, "col count");
    DenseMatrix m(n, d);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.data[i] = static_cast<double>(read_f32(is, "feature payload"));
    }
    return m;
}

void save_labels(const std::string& path, const std::vector<int>& labels, int num_classes) {
    for (int label : labels) {
        if (label < 0 || label >= num_classes) {
            throw ConfigError("save_labels: label out of range");
        }
    }
    std::ofstream os = open_out(path);
    os.write(kLabelMagic, 8);
    write_u32(os, kFileVersion);
    write_u32(os, static_cast<std::uint32_t>(labels.size()));
    write_u32(os, static_cast<std::uint32_t>(num_classes));
    for (int label : labels) {
        write_u32(os, static_cast<std::uint32_t>(label));
    }
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

LabelData load_labels(const std::string& path) {
    std::ifstream is = open_in(path);
    check_magic(is, kLabelMagic, path);
    check_version(is, path);
    const std::uint32_t n = read_u32(is, "label count");
    const std::uint32_t c = read_u32(is, "class count");
    LabelData out;
    out.num_classes = static_cast<int>(c);
    out.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t v = read_u32(is, "label payload");
        if (v >= c) {
            throw IoError(IoError::Kind::HeaderMismatch,
                          "label " + std::to_string(v) + " exceeds class count in " + path);
        }
        out.labels[i] = static_cast<int>(v);
    }
    return out;
}

void save_split(const std::string& path, const std::vector<std::uint8_t>& split) {
    std::ofstream os = open_out(path);
    os.write(reinterpret_cast<const char*>(split.data()), static_cast<std::streamsize>(split.size()));
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

std::vector<std::uint8_t> load_split(const std::string& path) {
    std::ifstream is = open_in(path);
    std::vector<std::uint8_t> split;
    char byte;
    while (is.get(byte)) {
        const auto tag = static_cast<std::uint8_t>(byte);
        if (tag > 2) {
            throw IoError(IoError::Kind::HeaderMismatch, "invalid split tag in " + path);
        }
        split.push_back(tag);
    }
    return split;
}

void save_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for writing: " + path);
    }
    os << "x=" << manifest.x_path << "\n";
    os << "y=" << manifest.y_path << "\n";
    os << "labels=" << manifest.labels_path << "\n";
    if (!manifest.split_path.empty()) {
        os << "split=" << manifest.split_path << "\n";
    }
    if (!os) {
        throw IoError(IoError::Kind::WriteFailed, "write failed: " + path);
    }
}

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw IoError(IoError::Kind::OpenFailed, "cannot open for reading: " + path);
    }
    Manifest m;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto pos = line.find('=');
        if (pos == std::string::npos) {
            throw IoError(IoError::Kind::HeaderMismatch, "manifest line without '=': " + line);
        }
        const std::string key = line.substr(0, pos);
        const std::string value = line.substr(pos + 1);
        if (key == "x") {
            m.x_path = value;
        } else if (key == "y") {
            m.y_path = value;
        } else if (key == "labels") {
            m.labels_path = value;
        } else if (key == "split") {
            m.split_path = value;
        } else {
            throw IoError(IoError::Kind::HeaderMismatch, "unknown manifest key: " + key);
        }
    }
    if (m.x_path.empty() || m.y_path.empty() || m.labels_path.empty()) {
        throw IoError(IoError::Kind::HeaderMismatch, "manifest missing x/y/labels entries: " + path);
    }
    return m;
}

std::string save_dataset(const std::string& dir, const PairedDataset& data) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path base(dir);
    save_features((base / "x.feat").string(), data.x);
    save_features((base / "y.feat").string(), data.y);
    save_labels((base / "labels.bin").string(), data.labels, data.num_classes);
    save_split((base / "split.bin").string(), data.split);
    Manifest manifest{"x.feat", "y.feat", "labels.bin", "split.bin"};
    const std::string manifest_path = (base / "manifest.txt").string();
    save_manifest(manifest_path, manifest);
    return manifest_path;
}

PairedDataset load_dataset(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    const Manifest manifest = load_manifest(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&base](const std::string& p) {
        const fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (base / fp).string();
    };

    PairedDataset data;
    data.x = load_features(resolve(manifest.x_path));
    data.y = load_features(resolve(manifest.y_path));
    LabelData lab = load_labels(resolve(manifest.labels_path));
    data.labels = std::move(lab.labels);
    data.num_classes = lab.num_classes;

    if (data.x.rows != data.y.rows || data.x.rows != data.labels.size()) {
        throw IoError(IoError::Kind::HeaderMismatch, "dataset files disagree on sample count");
    }

    if (!manifest.split_path.empty()) {
        data.split = load_split(resolve(manifest.split_path));
        if (data.split.size() != data.labels.size()) {
            throw IoError(IoError::Kind::HeaderMismatch, "split file length does not match sample count");
        }
    } else {
        data.split.assign(data.labels.size(), 0);
    }
    return data;
}

} // namespace dstc
