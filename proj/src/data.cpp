#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "ssrl/data.hpp"

namespace fs = std::filesystem;

namespace ssrl {

Tensor Dataset::image(int64_t idx) const {
    const Item& it = items[size_t(idx)];
    Tensor img(1, 3, it.h, it.w);
    const int64_t hw = int64_t(it.h) * it.w;
    for (int64_t p = 0; p < hw; ++p)
        for (int64_t c = 0; c < 3; ++c)
            img[size_t(c * hw + p)] = float(it.rgb[size_t(p * 3 + c)]) / 255.0f;
    return img;
}

std::vector<int32_t> Dataset::labels() const {
    std::vector<int32_t> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.label);
    return out;
}

std::vector<int64_t> Dataset::label_histogram() const {
    std::vector<int64_t> hist(class_names.size(), 0);
    for (const auto& it : items) ++hist[size_t(it.label)];
    return hist;
}

// ---------------------------------------------------------------------------
// PPM codec
// ---------------------------------------------------------------------------

void write_ppm(const std::string& path, const Tensor& image) {
    require(image.c() == 3, "write_ppm: need 3 channels");
    std::ofstream f(path, std::ios::binary);
    require(f.good(), "cannot write " + path);
    const int64_t H = image.h(), W = image.w(), hw = H * W;
    f << "P6\n" << W << " " << H << "\n255\n";
    std::vector<uint8_t> row(size_t(W) * 3);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x)
            for (int64_t c = 0; c < 3; ++c) {
                float v = image[size_t(c * hw + y * W + x)];
                row[size_t(x * 3 + c)] =
                    uint8_t(std::clamp(std::lround(v * 255.0f), 0l, 255l));
            }
        f.write(reinterpret_cast<const char*>(row.data()), std::streamsize(row.size()));
    }
}

namespace {

int ppm_next_int(std::istream& f) {
    // skips whitespace and '#' comments
    while (true) {
        int ch = f.peek();
        if (ch == '#') {
            std::string line;
            std::getline(f, line);
        } else if (std::isspace(ch)) {
            f.get();
        } else {
            break;
        }
    }
    int v = -1;
    f >> v;
    return v;
}

std::vector<uint8_t> read_ppm_bytes(const std::string& path, int& h, int& w) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw ComputeError("cannot open " + path);
    std::string magic(2, '\0');
    f.read(magic.data(), 2);
    if (magic != "P6") throw ComputeError("not a P6 ppm: " + path);
    w = ppm_next_int(f);
    h = ppm_next_int(f);
    int maxval = ppm_next_int(f);
    if (w <= 0 || h <= 0 || maxval != 255) throw ComputeError("bad ppm header: " + path);
    f.get();  // single whitespace after maxval
    std::vector<uint8_t> data(size_t(h) * size_t(w) * 3);
    f.read(reinterpret_cast<char*>(data.data()), std::streamsize(data.size()));
    if (size_t(f.gcount()) != data.size()) throw ComputeError("truncated ppm: " + path);
    return data;
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> bytes = read_ppm_bytes(path, h, w);
    Tensor img(1, 3, h, w);
    const int64_t hw = int64_t(h) * w;
    for (int64_t p = 0; p < hw; ++p)
        for (int64_t c = 0; c < 3; ++c)
            img[size_t(c * hw + p)] = float(bytes[size_t(p * 3 + c)]) / 255.0f;
    return img;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

Dataset load_dataset(const DatasetSpec& spec, const std::string& split) {
    const fs::path root = fs::path(spec.root) / split;
    require(fs::is_directory(root), "dataset root not readable: " + root.string());

    Dataset ds;
    ds.name = spec.name.empty() ? root.string() : spec.name;

    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    require(!class_dirs.empty(), "dataset has no class folders: " + root.string());
    if (spec.num_classes > 0)
        require(int(class_dirs.size()) == spec.num_classes,
                "dataset class count mismatch: expected " + std::to_string(spec.num_classes) +
                    ", found " + std::to_string(class_dirs.size()));
    ds.class_names = class_dirs;

    for (size_t cls = 0; cls < class_dirs.size(); ++cls) {
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(root / class_dirs[cls]))
            if (e.is_regular_file()) files.push_back(e.path().string());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            Dataset::Item item;
            try {
                item.rgb = read_ppm_bytes(file, item.h, item.w);
            } catch (const std::exception& ex) {
                std::cerr << "warning: skipping corrupt file " << file << " (" << ex.what()
                          << ")\n";
                ++ds.skipped;
                continue;
            }
            item.label = int32_t(cls);
            item.path = file;
            ds.items.push_back(std::move(item));
        }
    }

    // Verify against the manifest when one is present.
    const fs::path manifest = root / "manifest.txt";
    if (fs::exists(manifest)) {
        std::ifstream mf(manifest);
        std::vector<int64_t> hist = ds.label_histogram();
        std::string cname;
        int64_t count = 0;
        size_t idx = 0;
        while (mf >> cname >> count) {
            require(idx < ds.class_names.size() && cname == ds.class_names[idx],
                    "manifest class mismatch at " + cname);
            require(count == hist[idx] + 0,
                    "manifest count mismatch for " + cname + ": manifest says " +
                        std::to_string(count) + ", loaded " + std::to_string(hist[idx]));
            ++idx;
        }
        require(idx == ds.class_names.size(), "manifest is missing classes");
    }
    return ds;
}

void write_manifest(const std::string& dir, const std::vector<std::string>& classes,
                    const std::vector<int64_t>& counts) {
    std::ofstream f(fs::path(dir) / "manifest.txt");
    require(f.good(), "cannot write manifest in " + dir);
    for (size_t i = 0; i < classes.size(); ++i) f << classes[i] << " " << counts[i] << "\n";
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

void SplitIndex::save(const std::string& path) const {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp);
        require(f.good(), "cannot write split file: " + path);
        f << "split v1 seed=" << seed << " n=" << indices.size() << "\n";
        for (int64_t i : indices) f << i << "\n";
    }
    fs::rename(tmp, path);  // single-writer atomic publish
}

SplitIndex SplitIndex::load(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "cannot read split file: " + path);
    std::string header;
    std::getline(f, header);
    SplitIndex s;
    size_t n = 0;
    {
        std::istringstream hs(header);
        std::string tag, ver, kv;
        hs >> tag >> ver;
        require(tag == "split" && ver == "v1", "bad split header: " + header);
        while (hs >> kv) {
            auto eq = kv.find('=');
            require(eq != std::string::npos, "bad split header field: " + kv);
            if (kv.substr(0, eq) == "seed") s.seed = std::stoull(kv.substr(eq + 1));
            if (kv.substr(0, eq) == "n") n = std::stoul(kv.substr(eq + 1));
        }
    }
    int64_t v = 0;
    while (f >> v) s.indices.push_back(v);
    require(s.indices.size() == n, "split file length mismatch");
    for (size_t i = 1; i < s.indices.size(); ++i)
        require(s.indices[i] > s.indices[i - 1], "split indices not strictly increasing");
    return s;
}

HoldoutSplit make_holdout_split(int64_t train_size, int64_t holdout_size, uint64_t seed) {
    require(holdout_size > 0 && holdout_size < train_size,
            "holdout_size must be positive and smaller than the train split");
    std::vector<int64_t> all(static_cast<size_t>(train_size));
    std::iota(all.begin(), all.end(), 0);
    Rng rng(seed);
    rng.shuffle(all);
    HoldoutSplit out;
    out.holdout.seed = seed;
    out.holdout.indices.assign(all.begin(), all.begin() + holdout_size);
    std::sort(out.holdout.indices.begin(), out.holdout.indices.end());
    std::vector<bool> held(size_t(train_size), false);
    for (int64_t i : out.holdout.indices) held[size_t(i)] = true;
    for (int64_t i = 0; i < train_size; ++i)
        if (!held[size_t(i)]) out.train.push_back(i);
    return out;
}

// ---------------------------------------------------------------------------
// Standard augmentation
// ---------------------------------------------------------------------------

Tensor standard_augment(const Tensor& image, int64_t target_side, Rng& rng) {
    const double f = double(target_side) / 224.0;
    const int64_t resize_to = int64_t(std::llround(256.0 * f));
    const int64_t crop_to = int64_t(std::llround(224.0 * f));
    Tensor im = resize_smallest_side(image, resize_to);
    int64_t ymax = im.h() - crop_to, xmax = im.w() - crop_to;
    require(ymax >= 0 && xmax >= 0, "standard_augment: image too small");
    int64_t y0 = ymax > 0 ? rng.uniform_int(ymax + 1) : 0;
    int64_t x0 = xmax > 0 ? rng.uniform_int(xmax + 1) : 0;
    Tensor cropped = crop(im, y0, x0, crop_to, crop_to);
    if (crop_to == target_side) return cropped;
    return resize_bilinear(cropped, target_side, target_side);
}

Tensor standard_eval_view(const Tensor& image, int64_t target_side) {
    const double f = double(target_side) / 224.0;
    const int64_t resize_to = int64_t(std::llround(256.0 * f));
    const int64_t crop_to = int64_t(std::llround(224.0 * f));
    Tensor im = resize_smallest_side(image, resize_to);
    Tensor cropped = center_crop(im, crop_to);
    if (crop_to == target_side) return cropped;
    return resize_bilinear(cropped, target_side, target_side);
}

}  // namespace ssrl
