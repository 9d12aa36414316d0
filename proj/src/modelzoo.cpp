#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssrl/modelzoo.hpp"

namespace fs = std::filesystem;

namespace ssrl {

namespace {

constexpr int kMinInputSide = 8;  // five downsampling stages bottom out here

const int64_t kResidualUnits[4] = {3, 4, 6, 3};
const int64_t kVggConvs[5] = {2, 2, 4, 4, 4};

Tensor add(const Tensor& a, const Tensor& b) {
    require(a.same_shape(b), "add: shape mismatch");
    Tensor y(a.n(), a.c(), a.h(), a.w());
    const int64_t n = a.numel();
    const float* pa = a.data();
    const float* pb = b.data();
    float* py = y.data();
#pragma omp parallel for simd schedule(static)
    for (int64_t i = 0; i < n; ++i) py[i] = pa[i] + pb[i];
    return y;
}

}  // namespace

Family family_from_string(const std::string& s) {
    if (s == "resnet_v1") return Family::ResNetV1;
    if (s == "resnet_v2") return Family::ResNetV2;
    if (s == "revnet50") return Family::RevNet50;
    if (s == "vgg19_bn") return Family::Vgg19Bn;
    throw UsageError("unsupported family: " + s);
}

std::string family_to_string(Family f) {
    switch (f) {
        case Family::ResNetV1: return "resnet_v1";
        case Family::ResNetV2: return "resnet_v2";
        case Family::RevNet50: return "revnet50";
        case Family::Vgg19Bn: return "vgg19_bn";
    }
    throw UsageError("unknown family enum");
}

void ModelSpec::validate() const {
    require(widening_k > 0, "widening_k must be positive");
    require(rep_size >= 0, "rep_size must be positive when set");
    require(input_side >= kMinInputSide,
            "input_side too small for the downsampling chain (min " +
                std::to_string(kMinInputSide) + ")");
}

std::string ModelSpec::id() const {
    std::ostringstream os;
    os << family_to_string(family) << "_k" << widening_k;
    if (!final_relu) os << "_norelu";
    if (rep_size > 0) os << "_rep" << rep_size;
    os << "_s" << input_side;
    return os.str();
}

int64_t representation_dim(const ModelSpec& spec) {
    spec.validate();
    if (spec.rep_size > 0) return spec.rep_size;
    return 512 * int64_t(spec.widening_k);
}

int64_t tap_channels(const ModelSpec& spec, const std::string& tap) {
    spec.validate();
    const int64_t k = spec.widening_k;
    if (tap == "pre_logits") return representation_dim(spec);
    int idx = -1;
    for (int i = 0; i < 4; ++i)
        if (tap == "block" + std::to_string(i + 1)) idx = i;
    require(idx >= 0, "unknown layer name: " + tap);
    if (spec.family == Family::Vgg19Bn) {
        // blockN taps the input of max-pool N+1, i.e. conv block N+1.
        const int64_t vgg_ch[5] = {8 * k, 16 * k, 32 * k, 64 * k, 64 * k};
        return vgg_ch[idx + 1];
    }
    return (64 << idx) * k;
}

// ---------------------------------------------------------------------------
// Residual units
// ---------------------------------------------------------------------------

namespace {

// Post-activation bottleneck (v1): conv-bn-relu x2, conv-bn, add, relu.
class BottleneckV1 : public Layer {
public:
    BottleneckV1(int64_t in_ch, int64_t mid, int64_t out_ch, int64_t stride, bool relu_out)
        : conv1_(in_ch, mid, 1, 1),
          bn1_(mid),
          conv2_(mid, mid, 3, stride),
          bn2_(mid),
          conv3_(mid, out_ch, 1, 1),
          bn3_(out_ch),
          relu_out_flag_(relu_out),
          use_proj_(in_ch != out_ch || stride != 1) {
        if (use_proj_) {
            proj_conv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride);
            proj_bn_ = std::make_unique<BatchNorm2d>(out_ch);
        }
    }

    const Tensor& forward(const Tensor& x, bool train) override {
        x_ = &x;
        const Tensor& a = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
        const Tensor& b = relu2_.forward(bn2_.forward(conv2_.forward(a, train), train), train);
        const Tensor& c = bn3_.forward(conv3_.forward(b, train), train);
        sum_ = use_proj_ ? add(c, proj_bn_->forward(proj_conv_->forward(x, train), train))
                         : add(c, x);
        if (relu_out_flag_) return relu_out_.forward(sum_, train);
        return sum_;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor d = relu_out_flag_ ? relu_out_.backward(dy) : dy;
        Tensor t = conv3_.backward(bn3_.backward(d));
        t = conv2_.backward(bn2_.backward(relu2_.backward(t)));
        t = conv1_.backward(bn1_.backward(relu1_.backward(t)));
        if (use_proj_) {
            Tensor s = proj_conv_->backward(proj_bn_->backward(d));
            return add(t, s);
        }
        return add(t, d);
    }

    void collect_params(const std::string& p, std::vector<ParamRef>& out) override {
        conv1_.collect_params(p + ".conv1", out);
        bn1_.collect_params(p + ".bn1", out);
        conv2_.collect_params(p + ".conv2", out);
        bn2_.collect_params(p + ".bn2", out);
        conv3_.collect_params(p + ".conv3", out);
        bn3_.collect_params(p + ".bn3", out);
        if (use_proj_) {
            proj_conv_->collect_params(p + ".proj_conv", out);
            proj_bn_->collect_params(p + ".proj_bn", out);
        }
    }

    void collect_state(const std::string& p, std::vector<StateRef>& out) override {
        bn1_.collect_state(p + ".bn1", out);
        bn2_.collect_state(p + ".bn2", out);
        bn3_.collect_state(p + ".bn3", out);
        if (use_proj_) proj_bn_->collect_state(p + ".proj_bn", out);
    }

    void init(Rng& rng) override {
        conv1_.init(rng);
        conv2_.init(rng);
        conv3_.init(rng);
        if (use_proj_) proj_conv_->init(rng);
    }

private:
    Conv2d conv1_, conv2_, conv3_;
    BatchNorm2d bn1_, bn2_, bn3_;
    ReLU relu1_, relu2_, relu_out_;
    std::unique_ptr<Conv2d> proj_conv_;
    std::unique_ptr<BatchNorm2d> proj_bn_;
    bool relu_out_flag_, use_proj_;
    const Tensor* x_ = nullptr;
    Tensor sum_;
};

// Pre-activation bottleneck (v2): bn-relu first, projection taken from the
// pre-activated input, no activation after the addition.
class BottleneckV2 : public Layer {
public:
    BottleneckV2(int64_t in_ch, int64_t mid, int64_t out_ch, int64_t stride)
        : bn0_(in_ch),
          conv1_(in_ch, mid, 1, 1),
          bn1_(mid),
          conv2_(mid, mid, 3, stride),
          bn2_(mid),
          conv3_(mid, out_ch, 1, 1),
          use_proj_(in_ch != out_ch || stride != 1) {
        if (use_proj_) proj_conv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride);
    }

    const Tensor& forward(const Tensor& x, bool train) override {
        x_ = &x;
        const Tensor& a = relu0_.forward(bn0_.forward(x, train), train);
        const Tensor& m1 = relu1_.forward(bn1_.forward(conv1_.forward(a, train), train), train);
        const Tensor& m2 = relu2_.forward(bn2_.forward(conv2_.forward(m1, train), train), train);
        const Tensor& m3 = conv3_.forward(m2, train);
        out_ = use_proj_ ? add(m3, proj_conv_->forward(a, train)) : add(m3, x);
        return out_;
    }

    Tensor backward(const Tensor& dy) override {
        Tensor t = conv3_.backward(dy);
        t = conv2_.backward(bn2_.backward(relu2_.backward(t)));
        t = conv1_.backward(bn1_.backward(relu1_.backward(t)));
        if (use_proj_) t = add(t, proj_conv_->backward(dy));
        Tensor dpre = bn0_.backward(relu0_.backward(t));
        if (use_proj_) return dpre;
        return add(dpre, dy);
    }

    void collect_params(const std::string& p, std::vector<ParamRef>& out) override {
        bn0_.collect_params(p + ".bn0", out);
        conv1_.collect_params(p + ".conv1", out);
        bn1_.collect_params(p + ".bn1", out);
        conv2_.collect_params(p + ".conv2", out);
        bn2_.collect_params(p + ".bn2", out);
        conv3_.collect_params(p + ".conv3", out);
        if (use_proj_) proj_conv_->collect_params(p + ".proj_conv", out);
    }

    void collect_state(const std::string& p, std::vector<StateRef>& out) override {
        bn0_.collect_state(p + ".bn0", out);
        bn1_.collect_state(p + ".bn1", out);
        bn2_.collect_state(p + ".bn2", out);
    }

    void init(Rng& rng) override {
        conv1_.init(rng);
        conv2_.init(rng);
        conv3_.init(rng);
        if (use_proj_) proj_conv_->init(rng);
    }

private:
    BatchNorm2d bn0_;
    ReLU relu0_, relu1_, relu2_;
    Conv2d conv1_;
    BatchNorm2d bn1_;
    Conv2d conv2_;
    BatchNorm2d bn2_;
    Conv2d conv3_;
    std::unique_ptr<Conv2d> proj_conv_;
    bool use_proj_;
    const Tensor* x_ = nullptr;
};

}  // namespace

// ---------------------------------------------------------------------------
// RevUnit
// ---------------------------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
            "concat_channels: geometry mismatch");
    Tensor y(a.n(), a.c() + b.c(), a.h(), a.w());
    const int64_t hw = a.h() * a.w();
    for (int64_t n = 0; n < a.n(); ++n) {
        std::memcpy(y.data() + n * y.c() * hw, a.data() + n * a.c() * hw,
                    size_t(a.c() * hw) * sizeof(float));
        std::memcpy(y.data() + (n * y.c() + a.c()) * hw, b.data() + n * b.c() * hw,
                    size_t(b.c() * hw) * sizeof(float));
    }
    return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x) {
    require(x.c() % 2 == 0, "split_channels: odd channel count");
    const int64_t half = x.c() / 2, hw = x.h() * x.w();
    Tensor a(x.n(), half, x.h(), x.w()), b(x.n(), half, x.h(), x.w());
    for (int64_t n = 0; n < x.n(); ++n) {
        std::memcpy(a.data() + n * half * hw, x.data() + n * x.c() * hw,
                    size_t(half * hw) * sizeof(float));
        std::memcpy(b.data() + n * half * hw, x.data() + (n * x.c() + half) * hw,
                    size_t(half * hw) * sizeof(float));
    }
    return {std::move(a), std::move(b)};
}

std::pair<Tensor, Tensor> rev_unit_forward(const Tensor& x1, const Tensor& x2,
                                           const RevResidualFn& f) {
    require(x1.same_shape(x2), "rev_unit_forward: halves must have equal shape");
    Tensor y1 = add(x1, f(x2));
    return {std::move(y1), x2};
}

std::pair<Tensor, Tensor> rev_unit_inverse(const Tensor& y1, const Tensor& y2,
                                           const RevResidualFn& f) {
    require(y1.same_shape(y2), "rev_unit_inverse: halves must have equal shape");
    Tensor fx = f(y2);
    Tensor x1(y1.n(), y1.c(), y1.h(), y1.w());
    for (int64_t i = 0; i < y1.numel(); ++i) x1[size_t(i)] = y1[size_t(i)] - fx[size_t(i)];
    return {std::move(x1), y2};
}

RevUnit::RevUnit(int64_t channels, int64_t bottleneck_mid) : channels_(channels) {
    require(channels % 2 == 0, "rev unit needs an even channel count");
    const int64_t half = channels / 2;
    f_.add(std::make_unique<BatchNorm2d>(half));
    f_.add(std::make_unique<ReLU>());
    f_.add(std::make_unique<Conv2d>(half, bottleneck_mid, 1, 1));
    f_.add(std::make_unique<BatchNorm2d>(bottleneck_mid));
    f_.add(std::make_unique<ReLU>());
    f_.add(std::make_unique<Conv2d>(bottleneck_mid, bottleneck_mid, 3, 1));
    f_.add(std::make_unique<BatchNorm2d>(bottleneck_mid));
    f_.add(std::make_unique<ReLU>());
    f_.add(std::make_unique<Conv2d>(bottleneck_mid, half, 1, 1));
}

const Tensor& RevUnit::forward(const Tensor& x, bool train) {
    require(x.c() == channels_, "rev unit: channel mismatch");
    auto halves = split_channels(x);
    x1_ = std::move(halves.first);
    x2_ = std::move(halves.second);
    const Tensor& fo = f_.forward(x2_, train);
    out_ = concat_channels(x2_, add(x1_, fo));
    return out_;
}

Tensor RevUnit::backward(const Tensor& dy) {
    auto dhalves = split_channels(dy);
    const Tensor& d_y2 = dhalves.first;   // gradient at the x2 passthrough
    const Tensor& d_y1 = dhalves.second;  // gradient at x1 + F(x2)
    Tensor df = f_.backward(d_y1);
    return concat_channels(d_y1, add(d_y2, df));
}

Tensor RevUnit::inverse(const Tensor& y) {
    auto halves = split_channels(y);
    Tensor& x2 = halves.first;
    Tensor& y1 = halves.second;
    const Tensor& fo = f_.forward(x2, false);
    Tensor x1(y1.n(), y1.c(), y1.h(), y1.w());
    for (int64_t i = 0; i < y1.numel(); ++i) x1[size_t(i)] = y1[size_t(i)] - fo[size_t(i)];
    return concat_channels(x1, x2);
}

void RevUnit::collect_params(const std::string& p, std::vector<ParamRef>& out) {
    f_.collect_params(p + ".f", out);
}

void RevUnit::collect_state(const std::string& p, std::vector<StateRef>& out) {
    f_.collect_state(p + ".f", out);
}

void RevUnit::init(Rng& rng) { f_.init(rng); }

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

struct ModelBuilder {
    Model& m;

    void add(std::unique_ptr<Layer> l, const std::string& name, const std::string& tap = "") {
        m.stages_.push_back(std::move(l));
        m.stage_names_.push_back(name);
        if (!tap.empty()) m.tap_stage_[tap] = m.stages_.size() - 1;
    }

    void build_residual(const ModelSpec& spec) {
        const int64_t k = spec.widening_k;
        const bool v2 = spec.family == Family::ResNetV2;
        add(std::make_unique<Conv2d>(3, 16 * k, 7, 2), "stem.conv");
        if (!v2) {
            add(std::make_unique<BatchNorm2d>(16 * k), "stem.bn");
            add(std::make_unique<ReLU>(), "stem.relu");
        }
        add(std::make_unique<MaxPool2d>(3, 2), "stem.pool");
        int64_t in_ch = 16 * k;
        for (int b = 0; b < 4; ++b) {
            const int64_t out_ch = (64 << b) * k;
            const int64_t mid = (16 << b) * k;
            const int64_t stride = b == 0 ? 1 : 2;
            auto block = std::make_unique<Sequential>();
            for (int64_t u = 0; u < kResidualUnits[b]; ++u) {
                const int64_t s = u == 0 ? stride : 1;
                const int64_t ic = u == 0 ? in_ch : out_ch;
                if (v2) {
                    block->add(std::make_unique<BottleneckV2>(ic, mid, out_ch, s));
                } else {
                    const bool last_unit_of_net = b == 3 && u == kResidualUnits[b] - 1;
                    const bool relu_out = spec.final_relu || !last_unit_of_net;
                    block->add(std::make_unique<BottleneckV1>(ic, mid, out_ch, s, relu_out));
                }
            }
            add(std::move(block), "block" + std::to_string(b + 1),
                "block" + std::to_string(b + 1));
            in_ch = out_ch;
        }
        if (v2) {
            add(std::make_unique<BatchNorm2d>(in_ch), "head.bn");
            if (spec.final_relu) add(std::make_unique<ReLU>(), "head.relu");
        }
        add(std::make_unique<GlobalAvgPool>(), "head.gap");
    }

    void build_revnet(const ModelSpec& spec) {
        const int64_t k = spec.widening_k;
        add(std::make_unique<Conv2d>(3, 16 * k, 7, 2), "stem.conv");
        add(std::make_unique<MaxPool2d>(3, 2), "stem.pool");
        int64_t in_ch = 16 * k;
        m.rev_units_.assign(4, {});
        for (int b = 0; b < 4; ++b) {
            const int64_t out_ch = (64 << b) * k;
            const int64_t stride = b == 0 ? 1 : 2;
            // Non-invertible transition: strided projection between blocks.
            auto trans = std::make_unique<Sequential>();
            trans->add(std::make_unique<BatchNorm2d>(in_ch));
            trans->add(std::make_unique<ReLU>());
            trans->add(std::make_unique<Conv2d>(in_ch, out_ch, 1, stride));
            add(std::move(trans), "block" + std::to_string(b + 1) + ".transition");
            auto stack = std::make_unique<Sequential>();
            for (int64_t u = 0; u < kResidualUnits[b]; ++u) {
                auto unit = std::make_unique<RevUnit>(out_ch, out_ch / 8);
                m.rev_units_[size_t(b)].push_back(unit.get());
                stack->add(std::move(unit));
            }
            add(std::move(stack), "block" + std::to_string(b + 1) + ".units",
                "block" + std::to_string(b + 1));
            in_ch = out_ch;
        }
        add(std::make_unique<BatchNorm2d>(in_ch), "head.bn");
        if (spec.final_relu) add(std::make_unique<ReLU>(), "head.relu");
        add(std::make_unique<GlobalAvgPool>(), "head.gap");
    }

    void build_vgg(const ModelSpec& spec) {
        const int64_t k = spec.widening_k;
        const int64_t ch[5] = {8 * k, 16 * k, 32 * k, 64 * k, 64 * k};
        int64_t in_ch = 3;
        int64_t side = spec.input_side;
        for (int b = 0; b < 5; ++b) {
            auto block = std::make_unique<Sequential>();
            for (int64_t cidx = 0; cidx < kVggConvs[b]; ++cidx) {
                block->add(std::make_unique<Conv2d>(cidx == 0 ? in_ch : ch[b], ch[b], 3, 1));
                block->add(std::make_unique<BatchNorm2d>(ch[b]));
                block->add(std::make_unique<ReLU>());
            }
            // blockN names the input of max-pool N+1 (so conv blocks 2..5).
            std::string tap = b >= 1 ? "block" + std::to_string(b) : "";
            add(std::move(block), "conv" + std::to_string(b + 1), tap);
            add(std::make_unique<MaxPool2d>(2, 2), "pool" + std::to_string(b + 1));
            side = kern::pool_out_size(side, 2, 2);
            in_ch = ch[b];
        }
        add(std::make_unique<Flatten>(), "flatten");
        add(std::make_unique<Dense>(in_ch * side * side, 512 * k), "fc1");
        add(std::make_unique<ReLU>(), "fc1.relu");
        add(std::make_unique<Dense>(512 * k, 512 * k), "fc2");
        if (spec.final_relu) add(std::make_unique<ReLU>(), "fc2.relu");
    }

    void finish(const ModelSpec& spec) {
        if (spec.rep_size > 0)
            add(std::make_unique<Dense>(512 * int64_t(spec.widening_k), spec.rep_size),
                "rep_layer");
        m.tap_stage_["pre_logits"] = m.stages_.size() - 1;
    }
};

Model::Model(const ModelSpec& spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    ModelBuilder b{*this};
    switch (spec_.family) {
        case Family::ResNetV1:
        case Family::ResNetV2: b.build_residual(spec_); break;
        case Family::RevNet50: b.build_revnet(spec_); break;
        case Family::Vgg19Bn: b.build_vgg(spec_); break;
    }
    b.finish(spec_);
    Rng rng(seed);
    for (auto& s : stages_) s->init(rng);
}

const Tensor& Model::forward(const Tensor& images, bool train) {
    require(images.c() == 3 && images.h() == spec_.input_side && images.w() == spec_.input_side,
            "model forward: expected (N,3," + std::to_string(spec_.input_side) + "," +
                std::to_string(spec_.input_side) + ") input");
    stage_out_.assign(stages_.size(), nullptr);
    const Tensor* cur = &images;
    for (size_t i = 0; i < stages_.size(); ++i) {
        cur = &stages_[i]->forward(*cur, train);
        stage_out_[i] = cur;
    }
    return *cur;
}

Tensor Model::backward(const Tensor& d_prelogits) {
    Tensor cur = d_prelogits;
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) cur = (*it)->backward(cur);
    return cur;
}

const std::vector<std::string>& Model::tap_names() {
    static const std::vector<std::string> names = {"block1", "block2", "block3", "block4",
                                                   "pre_logits"};
    return names;
}

std::vector<TapEntry> Model::taps() const {
    require(stage_out_.size() == stages_.size() && stage_out_.back() != nullptr,
            "taps: no forward pass has run");
    std::vector<TapEntry> out;
    for (const auto& name : tap_names()) {
        auto it = tap_stage_.find(name);
        require(it != tap_stage_.end(), "unknown layer name: " + name);
        out.push_back({name, stage_out_[it->second]});
    }
    return out;
}

std::vector<ParamRef> Model::params() {
    std::vector<ParamRef> out;
    for (size_t i = 0; i < stages_.size(); ++i) stages_[i]->collect_params(stage_names_[i], out);
    return out;
}

std::vector<StateRef> Model::state() {
    std::vector<StateRef> out;
    for (size_t i = 0; i < stages_.size(); ++i) stages_[i]->collect_state(stage_names_[i], out);
    return out;
}

int64_t Model::parameter_count() {
    int64_t n = 0;
    for (const auto& p : params()) n += p.size;
    return n;
}

uint64_t Model::param_checksum() {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const float* data, int64_t n) {
        const unsigned char* bytes = reinterpret_cast<const unsigned char*>(data);
        for (int64_t i = 0; i < n * int64_t(sizeof(float)); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : params()) mix(p.value, p.size);
    for (const auto& s : state()) mix(s.value, s.size);
    return h;
}

std::vector<RevUnit*> Model::rev_units(int block) const {
    require(spec_.family == Family::RevNet50, "rev_units: not a revnet");
    require(block >= 0 && block < 4, "rev_units: bad block index");
    return rev_units_[size_t(block)];
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

Tensor extract_representation(Model& model, const std::string& layer_name,
                              const Tensor& images, int64_t batch_size) {
    bool known = false;
    for (const auto& n : Model::tap_names()) known |= n == layer_name;
    require(known, "unknown layer name: " + layer_name);

    const int64_t N = images.n();
    const int64_t side = model.spec().input_side;
    Tensor result;
    int64_t dim = -1;
    for (int64_t start = 0; start < N; start += batch_size) {
        const int64_t bn = std::min(batch_size, N - start);
        Tensor batch(bn, 3, side, side);
        std::memcpy(batch.data(), images.data() + start * 3 * side * side,
                    size_t(batch.numel()) * sizeof(float));
        model.forward(batch, false);
        const Tensor* tap = nullptr;
        for (const auto& t : model.taps())
            if (t.name == layer_name) tap = t.value;
        Tensor pooled;
        if (tap->h() * tap->w() > 1)
            kern::gap_fwd(*tap, pooled);
        else
            pooled = *tap;
        if (dim < 0) {
            dim = pooled.c();
            result = Tensor::matrix(N, dim);
        }
        std::memcpy(result.data() + start * dim, pooled.data(),
                    size_t(pooled.numel()) * sizeof(float));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

void write_blob(std::ofstream& f, const std::string& name, const float* data, int64_t n) {
    uint32_t len = uint32_t(name.size());
    uint64_t count = uint64_t(n);
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(name.data(), len);
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    f.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(float)));
}

void read_blob(std::ifstream& f, const std::string& expect_name, float* data, int64_t n) {
    uint32_t len = 0;
    f.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string name(len, '\0');
    f.read(name.data(), len);
    uint64_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    require(f.good(), "corrupt parameter blob");
    require(name == expect_name, "parameter blob mismatch: expected " + expect_name +
                                     ", found " + name);
    require(count == uint64_t(n), "parameter blob size mismatch for " + name);
    f.read(reinterpret_cast<char*>(data), std::streamsize(count * sizeof(float)));
}

}  // namespace

void save_model(const std::string& dir, Model& model, const std::string& task_id,
                int64_t training_step) {
    fs::create_directories(dir);
    const ModelSpec& s = model.spec();
    {
        std::ofstream mf(dir + "/manifest.txt");
        require(mf.good(), "cannot write manifest in " + dir);
        mf << "family=" << family_to_string(s.family) << "\n"
           << "k=" << s.widening_k << "\n"
           << "final_relu=" << (s.final_relu ? 1 : 0) << "\n"
           << "rep_size=" << s.rep_size << "\n"
           << "input_side=" << s.input_side << "\n"
           << "pretext_task=" << task_id << "\n"
           << "training_step=" << training_step << "\n";
    }
    std::ofstream f(dir + "/params.bin", std::ios::binary);
    require(f.good(), "cannot write params in " + dir);
    const char magic[] = "ssrlparams v1\n";
    f.write(magic, sizeof(magic) - 1);
    for (const auto& p : model.params()) write_blob(f, p.name, p.value, p.size);
    for (const auto& st : model.state()) write_blob(f, st.name, st.value, st.size);
}

LoadedModel load_model(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.txt");
    require(mf.good(), "missing manifest in " + dir);
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(mf, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    for (const char* key :
         {"family", "k", "final_relu", "rep_size", "input_side", "pretext_task",
          "training_step"})
        require(kv.count(key) > 0, std::string("manifest missing key: ") + key);

    ModelSpec spec;
    spec.family = family_from_string(kv["family"]);
    spec.widening_k = std::stoi(kv["k"]);
    spec.final_relu = kv["final_relu"] != "0";
    spec.rep_size = std::stoi(kv["rep_size"]);
    spec.input_side = std::stoi(kv["input_side"]);

    LoadedModel out;
    out.model = std::make_unique<Model>(spec, 0);
    out.task_id = kv["pretext_task"];
    out.training_step = std::stoll(kv["training_step"]);

    std::ifstream f(dir + "/params.bin", std::ios::binary);
    require(f.good(), "missing params.bin in " + dir);
    char magic[14];
    f.read(magic, 14);
    require(std::memcmp(magic, "ssrlparams v1\n", 14) == 0, "bad params.bin magic");
    for (const auto& p : out.model->params()) read_blob(f, p.name, p.value, p.size);
    for (const auto& st : out.model->state()) read_blob(f, st.name, st.value, st.size);
    return out;
}

}  // namespace ssrl
