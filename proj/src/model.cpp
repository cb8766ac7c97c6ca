#include "groundkit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <stdexcept>

#include "groundkit/rng.hpp"
#include "groundkit/text.hpp"

namespace groundkit::model {

using ag::Tensor;

// ---------------------------------------------------------------- vocabulary

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "[SEG]", "<unk>"};
}

Vocabulary::Vocabulary() : tokens_(kSpecials) {}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
    std::set<std::string> words;
    for (const auto& t : texts)
        for (auto& w : text::tokenize_words(t))
            if (w != text::kSegToken) words.insert(std::move(w));
    Vocabulary v;
    for (const auto& w : words)
        if (std::find(kSpecials.begin(), kSpecials.end(), w) == kSpecials.end()) v.tokens_.push_back(w);
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin()))
        throw std::invalid_argument("vocabulary must start with <pad> <bos> <eos> [SEG] <unk>");
    std::set<std::string> seen(tokens.begin(), tokens.end());
    if (seen.size() != tokens.size()) throw std::invalid_argument("vocabulary tokens must be unique");
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    return v;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
    return from_tokens(j.get<std::vector<std::string>>());
}

int Vocabulary::id(std::string_view token) const {
    // Linear scan is fine at toy vocabulary sizes; callers cache tokenized ids.
    for (size_t i = 0; i < tokens_.size(); ++i)
        if (tokens_[i] == token) return static_cast<int>(i);
    return kUnk;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range");
    return tokens_[static_cast<size_t>(id)];
}

Vocabulary vocabulary_for(const DatasetManifest& manifest) {
    std::vector<std::string> texts;
    texts.reserve(manifest.samples.size() * 2);
    for (const auto& s : manifest.samples) {
        texts.push_back(s.question);
        texts.push_back(s.answer);
    }
    return Vocabulary::build(texts);
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
    std::vector<int> ids;
    for (const auto& w : text::tokenize_words(text)) {
        if (w == text::kSegToken) {
            ids.push_back(Vocabulary::kSeg);
            continue;
        }
        const int id = vocab.id(w);
        ids.push_back(id < Vocabulary::kFirstWord ? Vocabulary::kUnk : id);
    }
    return ids;
}

std::string detokenize(std::span<const int> ids, const Vocabulary& vocab) {
    std::vector<std::string> words;
    for (int id : ids) {
        if (id == Vocabulary::kPad || id == Vocabulary::kBos || id == Vocabulary::kEos) continue;
        words.push_back(vocab.token(id));
    }
    return text::join_tokens(words);
}

// ---------------------------------------------------------------- config

void ModelConfig::validate() const {
    auto req = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(what);
    };
    req(image_height >= 1 && image_width >= 1, "image size must be positive");
    req(patch_size >= 1 && image_height % patch_size == 0 && image_width % patch_size == 0,
        "image size must be divisible by patch_size");
    req(seg_patch_size >= 1 && image_height % seg_patch_size == 0 && image_width % seg_patch_size == 0,
        "image size must be divisible by seg_patch_size");
    req(d_model >= 1 && n_heads >= 1 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
    req(n_layers_vision >= 0 && n_layers_lm >= 1 && n_layers_mask_decoder >= 1, "layer counts out of range");
    req(n_prompt_queries >= 1 && mlp_ratio >= 1, "prompt queries and mlp ratio must be positive");
    req(max_question_len >= 1 && max_answer_len >= 1, "sequence limits must be positive");
    req(mask_threshold > 0.0 && mask_threshold < 1.0, "mask_threshold must lie in (0, 1)");
    req(!adapter_rank || *adapter_rank >= 1, "adapter_rank must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j = {
        {"image_size", {image_height, image_width}},
        {"patch_size", patch_size},
        {"seg_patch_size", seg_patch_size},
        {"d_model", d_model},
        {"n_heads", n_heads},
        {"n_layers_vision", n_layers_vision},
        {"n_layers_lm", n_layers_lm},
        {"n_layers_mask_decoder", n_layers_mask_decoder},
        {"n_prompt_queries", n_prompt_queries},
        {"mlp_ratio", mlp_ratio},
        {"max_question_len", max_question_len},
        {"max_answer_len", max_answer_len},
        {"mask_threshold", mask_threshold},
        {"adapter_rank", adapter_rank ? nlohmann::json(*adapter_rank) : nlohmann::json(nullptr)},
        {"injection", injection == Injection::HiddenStates ? "hidden_states" : "embedding_table"},
        {"init_seed", init_seed},
        {"vocab", vocab.to_json()},
    };
    return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    if (j.contains("image_size")) {
        const auto s = j["image_size"].get<std::vector<int>>();
        if (s.size() != 2) throw std::invalid_argument("image_size must be [H, W]");
        c.image_height = s[0];
        c.image_width = s[1];
    }
    c.patch_size = j.value("patch_size", c.patch_size);
    c.seg_patch_size = j.value("seg_patch_size", c.seg_patch_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.n_layers_vision = j.value("n_layers_vision", c.n_layers_vision);
    c.n_layers_lm = j.value("n_layers_lm", c.n_layers_lm);
    c.n_layers_mask_decoder = j.value("n_layers_mask_decoder", c.n_layers_mask_decoder);
    c.n_prompt_queries = j.value("n_prompt_queries", c.n_prompt_queries);
    c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
    c.max_question_len = j.value("max_question_len", c.max_question_len);
    c.max_answer_len = j.value("max_answer_len", c.max_answer_len);
    c.mask_threshold = j.value("mask_threshold", c.mask_threshold);
    if (j.contains("adapter_rank") && !j["adapter_rank"].is_null()) c.adapter_rank = j["adapter_rank"].get<int>();
    if (j.contains("injection")) {
        const auto s = j["injection"].get<std::string>();
        if (s == "hidden_states") c.injection = Injection::HiddenStates;
        else if (s == "embedding_table") c.injection = Injection::EmbeddingTable;
        else throw std::invalid_argument("unknown injection mode: " + s);
    }
    c.init_seed = j.value("init_seed", c.init_seed);
    if (j.contains("vocab")) c.vocab = Vocabulary::from_json(j["vocab"]);
    c.validate();
    return c;
}

std::string_view to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::MllmVision: return "mllm_vision";
        case ParamGroup::Projector: return "projector";
        case ParamGroup::LmEmbedding: return "lm_embedding";
        case ParamGroup::LmBase: return "lm_base";
        case ParamGroup::LmAdapter: return "lm_adapter";
        case ParamGroup::LmHead: return "lm_head";
        case ParamGroup::SegVision: return "seg_vision";
        case ParamGroup::PromptEncoder: return "prompt_encoder";
        case ParamGroup::MaskDecoder: return "mask_decoder";
    }
    return "?";
}

// ---------------------------------------------------------------- pixel head

template <typename T>
Tensor<T> pixel_head(const Tensor<T>& token_out, const Image& image, int patch) {
    const int h = image.height, w = image.width;
    const int gw = w / patch;
    const int pp = patch * patch;
    const int stride = pp + kPixelFeatures;
    if (h % patch != 0 || w % patch != 0 || token_out.rows() != (h / patch) * gw || token_out.cols() != stride)
        throw std::invalid_argument("pixel_head shape mismatch");
    std::vector<T> out(static_cast<size_t>(h) * w);
    const T* src = token_out.data();
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const T* tok = src + static_cast<size_t>((r / patch) * gw + c / patch) * stride;
            const T x = image(r, c);
            out[static_cast<size_t>(r) * w + c] = tok[(r % patch) * patch + c % patch] + tok[pp] * x + tok[pp + 1] * x * x;
        }
    }
    std::vector<T> px(image.data.begin(), image.data.end());
    return ag::detail::make_result<T>(h, w, std::move(out), {token_out},
                                      [h, w, gw, patch, pp, stride, px = std::move(px)](ag::Node<T>& self) {
                                          T* g = ag::detail::pgrad(self, 0);
                                          if (!g) return;
                                          for (int r = 0; r < h; ++r)
                                              for (int c = 0; c < w; ++c) {
                                                  const size_t i = static_cast<size_t>(r) * w + c;
                                                  const T gi = self.grad[i];
                                                  T* tok = g + static_cast<size_t>((r / patch) * gw + c / patch) * stride;
                                                  tok[(r % patch) * patch + c % patch] += gi;
                                                  tok[pp] += gi * px[i];
                                                  tok[pp + 1] += gi * px[i] * px[i];
                                              }
                                      });
}

template Tensor<float> pixel_head(const Tensor<float>&, const Image&, int);
template Tensor<double> pixel_head(const Tensor<double>&, const Image&, int);

std::vector<double> apply_adapter(const std::vector<double>& base, int out, int in, const std::vector<double>& a,
                                  const std::vector<double>& b, int rank, const std::vector<double>& x) {
    if (base.size() != static_cast<size_t>(out) * in || a.size() != static_cast<size_t>(rank) * in ||
        b.size() != static_cast<size_t>(out) * rank || x.size() != static_cast<size_t>(in))
        throw std::invalid_argument("adapter shape mismatch");
    std::vector<double> ax(static_cast<size_t>(rank), 0.0);
    for (int r = 0; r < rank; ++r)
        for (int i = 0; i < in; ++i) ax[static_cast<size_t>(r)] += a[static_cast<size_t>(r) * in + i] * x[static_cast<size_t>(i)];
    std::vector<double> y(static_cast<size_t>(out), 0.0);
    for (int o = 0; o < out; ++o) {
        double acc = 0.0;
        for (int i = 0; i < in; ++i) acc += base[static_cast<size_t>(o) * in + i] * x[static_cast<size_t>(i)];
        for (int r = 0; r < rank; ++r) acc += b[static_cast<size_t>(o) * rank + r] * ax[static_cast<size_t>(r)];
        y[static_cast<size_t>(o)] = acc;
    }
    return y;
}

// ---------------------------------------------------------------- construction

namespace {

// Every parameter gets its own generator seeded from (init_seed, name) so that
// adding a parameter never shifts the initialization of the others.
std::uint64_t name_seed(std::uint64_t seed, const std::string& name) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (unsigned char c : name) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace

template <typename T>
Tensor<T> GroundedModel<T>::add_param(const std::string& name, ParamGroup group, int rows, int cols, double stddev,
                                      bool frozen, double mean) {
    Rng rng(name_seed(config_.init_seed, name));
    std::vector<T> v(static_cast<size_t>(rows) * cols);
    for (auto& x : v) x = static_cast<T>(stddev > 0.0 ? rng.normal(mean, stddev) : mean);
    Tensor<T> t = frozen ? Tensor<T>::constant(rows, cols, std::move(v)) : Tensor<T>::parameter(rows, cols, std::move(v));
    params_.push_back({name, group, frozen, t});
    return t;
}

template <typename T>
LinearParams<T> GroundedModel<T>::make_linear(const std::string& name, ParamGroup group, int out, int in, bool bias,
                                              bool frozen, bool adapt, double gain) {
    LinearParams<T> p;
    const double std = gain / std::sqrt(static_cast<double>(in));
    const bool base_frozen = frozen || adapt;
    p.weight = add_param(name + ".weight", group, out, in, std, base_frozen);
    if (bias) p.bias = add_param(name + ".bias", group, 1, out, frozen ? 0.1 : 0.0, base_frozen);
    if (adapt) {
        const int r = *config_.adapter_rank;
        p.lora_a = add_param(name + ".lora_a", ParamGroup::LmAdapter, r, in, 1.0 / std::sqrt(static_cast<double>(in)), false);
        p.lora_b = add_param(name + ".lora_b", ParamGroup::LmAdapter, out, r, 0.0, false);
    }
    return p;
}

template <typename T>
typename GroundedModel<T>::Block GroundedModel<T>::make_block(const std::string& name, ParamGroup group, bool frozen,
                                                              bool adapt) {
    const int d = config_.d_model;
    const int hdim = d * config_.mlp_ratio;
    Block b;
    b.ln1_g = add_param(name + ".ln1.gain", group, 1, d, 0.0, frozen, 1.0);
    b.ln1_b = add_param(name + ".ln1.bias", group, 1, d, 0.0, frozen);
    b.q = make_linear(name + ".attn.q", group, d, d, false, frozen, adapt);
    b.k = make_linear(name + ".attn.k", group, d, d, false, frozen, adapt);
    b.v = make_linear(name + ".attn.v", group, d, d, false, frozen, adapt);
    b.o = make_linear(name + ".attn.o", group, d, d, false, frozen, adapt, 0.5);
    b.ln2_g = add_param(name + ".ln2.gain", group, 1, d, 0.0, frozen, 1.0);
    b.ln2_b = add_param(name + ".ln2.bias", group, 1, d, 0.0, frozen);
    b.fc1 = make_linear(name + ".mlp.fc1", group, hdim, d, true, frozen, adapt);
    b.fc2 = make_linear(name + ".mlp.fc2", group, d, hdim, true, frozen, adapt, 0.5);
    return b;
}

template <typename T>
typename GroundedModel<T>::CrossBlock GroundedModel<T>::make_cross(const std::string& name, ParamGroup group) {
    const int d = config_.d_model;
    CrossBlock b;
    b.lnq_g = add_param(name + ".lnq.gain", group, 1, d, 0.0, false, 1.0);
    b.lnq_b = add_param(name + ".lnq.bias", group, 1, d, 0.0, false);
    b.lnkv_g = add_param(name + ".lnkv.gain", group, 1, d, 0.0, false, 1.0);
    b.lnkv_b = add_param(name + ".lnkv.bias", group, 1, d, 0.0, false);
    b.q = make_linear(name + ".q", group, d, d, false, false, false);
    b.k = make_linear(name + ".k", group, d, d, false, false, false);
    b.v = make_linear(name + ".v", group, d, d, false, false, false);
    b.o = make_linear(name + ".o", group, d, d, false, false, false, 0.5);
    return b;
}

template <typename T>
typename GroundedModel<T>::MlpBlock GroundedModel<T>::make_mlp(const std::string& name, ParamGroup group) {
    const int d = config_.d_model;
    MlpBlock b;
    b.ln_g = add_param(name + ".ln.gain", group, 1, d, 0.0, false, 1.0);
    b.ln_b = add_param(name + ".ln.bias", group, 1, d, 0.0, false);
    b.fc1 = make_linear(name + ".fc1", group, d * config_.mlp_ratio, d, true, false, false);
    b.fc2 = make_linear(name + ".fc2", group, d, d * config_.mlp_ratio, true, false, false, 0.5);
    return b;
}

template <typename T>
GroundedModel<T>::GroundedModel(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    const int d = config_.d_model;
    const int V = config_.vocab.size();
    const bool adapt = config_.adapter_rank.has_value();

    const int p = config_.patch_size;
    vis_patch_w_ = add_param("mllm_vision.patch.weight", ParamGroup::MllmVision, d, p * p, 1.0 / p, true);
    vis_patch_b_ = add_param("mllm_vision.patch.bias", ParamGroup::MllmVision, 1, d, 0.5, true);
    vis_pos_ = add_param("mllm_vision.pos", ParamGroup::MllmVision, config_.n_vision_tokens(), d, 0.1, true);
    for (int i = 0; i < config_.n_layers_vision; ++i)
        vis_blocks_.push_back(make_block("mllm_vision.block" + std::to_string(i), ParamGroup::MllmVision, true, false));

    proj1_ = make_linear("projector.fc1", ParamGroup::Projector, d, d, true, false, false);
    proj2_ = make_linear("projector.fc2", ParamGroup::Projector, d, d, true, false, false);

    tok_emb_ = add_param("lm.tok_emb", ParamGroup::LmEmbedding, V, d, 0.5, false);
    lm_pos_ = add_param("lm.pos_emb", ParamGroup::LmEmbedding, config_.max_sequence(), d, 0.1, false);
    for (int i = 0; i < config_.n_layers_lm; ++i)
        lm_blocks_.push_back(make_block("lm.block" + std::to_string(i), ParamGroup::LmBase, false, adapt));
    lnf_g_ = add_param("lm.ln_f.gain", ParamGroup::LmHead, 1, d, 0.0, false, 1.0);
    lnf_b_ = add_param("lm.ln_f.bias", ParamGroup::LmHead, 1, d, 0.0, false);
    lm_head_ = add_param("lm.head", ParamGroup::LmHead, V, d, 1.0 / std::sqrt(static_cast<double>(d)), false);

    const int sp = config_.seg_patch_size;
    seg_patch_w_ = add_param("seg_vision.patch.weight", ParamGroup::SegVision, d, sp * sp, 1.0 / sp, true);
    seg_patch_b_ = add_param("seg_vision.patch.bias", ParamGroup::SegVision, 1, d, 0.5, true);
    seg_pos_ = add_param("seg_vision.pos", ParamGroup::SegVision, config_.n_seg_tokens(), d, 0.1, true);
    for (int i = 0; i < config_.n_layers_vision; ++i)
        seg_blocks_.push_back(make_block("seg_vision.block" + std::to_string(i), ParamGroup::SegVision, true, false));

    type_emb_ = add_param("prompt.type_emb", ParamGroup::PromptEncoder, 2, d, 0.1, false);
    queries_ = add_param("prompt.queries", ParamGroup::PromptEncoder, config_.n_prompt_queries, d, 0.5, false);
    prompt_cross_ = make_cross("prompt.cross", ParamGroup::PromptEncoder);
    prompt_mlp_ = make_mlp("prompt.mlp", ParamGroup::PromptEncoder);

    neck_ = make_linear("mask_decoder.neck", ParamGroup::MaskDecoder, d, d, true, false, false);
    for (int i = 0; i < config_.n_layers_mask_decoder; ++i) {
        const std::string n = "mask_decoder.layer" + std::to_string(i);
        dec_layers_.push_back({make_cross(n + ".token_to_image", ParamGroup::MaskDecoder),
                               make_cross(n + ".image_to_token", ParamGroup::MaskDecoder),
                               make_mlp(n + ".token_mlp", ParamGroup::MaskDecoder),
                               make_mlp(n + ".image_mlp", ParamGroup::MaskDecoder)});
    }
    dec_ln_g_ = add_param("mask_decoder.ln.gain", ParamGroup::MaskDecoder, 1, d, 0.0, false, 1.0);
    dec_ln_b_ = add_param("mask_decoder.ln.bias", ParamGroup::MaskDecoder, 1, d, 0.0, false);
    pixel_head_ = make_linear("mask_decoder.pixel_head", ParamGroup::MaskDecoder, sp * sp + kPixelFeatures, d, true,
                              false, false, 0.5);
}

template <typename T>
Param<T>& GroundedModel<T>::param(std::string_view name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
const Param<T>& GroundedModel<T>::param(std::string_view name) const {
    return const_cast<GroundedModel*>(this)->param(name);
}

template <typename T>
std::vector<Tensor<T>> GroundedModel<T>::trainable() const {
    std::vector<Tensor<T>> out;
    for (const auto& p : params_)
        if (!p.frozen) out.push_back(p.tensor);
    return out;
}

template <typename T>
size_t GroundedModel<T>::count_parameters(std::optional<ParamGroup> group, bool trainable_only) const {
    size_t n = 0;
    for (const auto& p : params_) {
        if (group && p.group != *group) continue;
        if (trainable_only && p.frozen) continue;
        n += p.tensor.size();
    }
    return n;
}

// ---------------------------------------------------------------- layers

template <typename T>
Tensor<T> GroundedModel<T>::linear(const LinearParams<T>& p, const Tensor<T>& x) const {
    Tensor<T> y = ag::matmul_nt(x, p.weight);
    if (p.lora_a.defined()) y = ag::add(y, ag::matmul_nt(ag::matmul_nt(x, p.lora_a), p.lora_b));
    if (p.bias.defined()) y = ag::add_row(y, p.bias);
    return y;
}

template <typename T>
Tensor<T> GroundedModel<T>::attention(const LinearParams<T>& qp, const LinearParams<T>& kp, const LinearParams<T>& vp,
                                      const LinearParams<T>& op, const Tensor<T>& xq, const Tensor<T>& xkv,
                                      bool causal) const {
    const Tensor<T> q = linear(qp, xq);
    const Tensor<T> k = linear(kp, xkv);
    const Tensor<T> v = linear(vp, xkv);
    const int heads = config_.n_heads;
    const int hd = config_.d_model / heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(hd));
    std::vector<Tensor<T>> outs;
    outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        const Tensor<T> qh = heads == 1 ? q : ag::slice_cols(q, h * hd, (h + 1) * hd);
        const Tensor<T> kh = heads == 1 ? k : ag::slice_cols(k, h * hd, (h + 1) * hd);
        const Tensor<T> vh = heads == 1 ? v : ag::slice_cols(v, h * hd, (h + 1) * hd);
        const Tensor<T> att = ag::softmax_rows(ag::scale(ag::matmul_nt(qh, kh), scale), causal);
        outs.push_back(ag::matmul(att, vh));
    }
    return linear(op, heads == 1 ? outs[0] : ag::concat_cols(outs));
}

template <typename T>
Tensor<T> GroundedModel<T>::run_block(const Block& b, const Tensor<T>& x, bool causal) const {
    const Tensor<T> h = ag::layer_norm(x, b.ln1_g, b.ln1_b);
    Tensor<T> y = ag::add(x, attention(b.q, b.k, b.v, b.o, h, h, causal));
    const Tensor<T> h2 = ag::layer_norm(y, b.ln2_g, b.ln2_b);
    return ag::add(y, linear(b.fc2, ag::gelu(linear(b.fc1, h2))));
}

template <typename T>
Tensor<T> GroundedModel<T>::run_cross(const CrossBlock& b, const Tensor<T>& xq, const Tensor<T>& xkv) const {
    const Tensor<T> q = ag::layer_norm(xq, b.lnq_g, b.lnq_b);
    const Tensor<T> kv = ag::layer_norm(xkv, b.lnkv_g, b.lnkv_b);
    return ag::add(xq, attention(b.q, b.k, b.v, b.o, q, kv, false));
}

template <typename T>
Tensor<T> GroundedModel<T>::run_mlp(const MlpBlock& b, const Tensor<T>& x) const {
    const Tensor<T> h = ag::layer_norm(x, b.ln_g, b.ln_b);
    return ag::add(x, linear(b.fc2, ag::gelu(linear(b.fc1, h))));
}

template <typename T>
void GroundedModel<T>::check_image(const ImageSample& image) const {
    if (image.pixels.height != config_.image_height || image.pixels.width != config_.image_width)
        throw std::invalid_argument("image shape " + std::to_string(image.pixels.height) + "x" +
                                    std::to_string(image.pixels.width) + " does not match model input " +
                                    std::to_string(config_.image_height) + "x" + std::to_string(config_.image_width));
}

template <typename T>
Tensor<T> GroundedModel<T>::encode_patches(const Image& image, int patch, const Tensor<T>& w, const Tensor<T>& b,
                                           const Tensor<T>& pos, const std::vector<Block>& blocks) const {
    const int gh = image.height / patch, gw = image.width / patch;
    std::vector<T> patches(static_cast<size_t>(gh) * gw * patch * patch);
    size_t i = 0;
    for (int pr = 0; pr < gh; ++pr)
        for (int pc = 0; pc < gw; ++pc)
            for (int r = 0; r < patch; ++r)
                for (int c = 0; c < patch; ++c) patches[i++] = static_cast<T>(image(pr * patch + r, pc * patch + c));
    Tensor<T> x = Tensor<T>::constant(gh * gw, patch * patch, std::move(patches));
    x = ag::add(ag::add_row(ag::matmul_nt(x, w), b), pos);
    for (const auto& blk : blocks) x = run_block(blk, x, false);
    return x;
}

template <typename T>
Tensor<T> GroundedModel<T>::encode_image_mllm(const ImageSample& image) const {
    check_image(image);
    return encode_patches(image.pixels, config_.patch_size, vis_patch_w_, vis_patch_b_, vis_pos_, vis_blocks_);
}

template <typename T>
Tensor<T> GroundedModel<T>::encode_image_seg(const ImageSample& image) const {
    check_image(image);
    return encode_patches(image.pixels, config_.seg_patch_size, seg_patch_w_, seg_patch_b_, seg_pos_, seg_blocks_);
}

template <typename T>
Tensor<T> GroundedModel<T>::project_vision(const Tensor<T>& vision_tokens) const {
    return linear(proj2_, ag::gelu(linear(proj1_, vision_tokens)));
}

template <typename T>
Tensor<T> GroundedModel<T>::run_lm(const Tensor<T>& projected_vision, std::span<const int> ids) const {
    Tensor<T> x = ag::concat_rows<T>({projected_vision, ag::gather_rows(tok_emb_, ids)});
    if (x.rows() > lm_pos_.rows()) throw std::invalid_argument("sequence exceeds the model context");
    x = ag::add(x, ag::slice_rows(lm_pos_, 0, x.rows()));
    for (const auto& blk : lm_blocks_) x = run_block(blk, x, true);
    return ag::layer_norm(x, lnf_g_, lnf_b_);
}

template <typename T>
std::vector<int> GroundedModel<T>::question_ids(std::string_view question) const {
    auto ids = tokenize(question, config_.vocab);
    if (static_cast<int>(ids.size()) > config_.max_question_len) ids.resize(static_cast<size_t>(config_.max_question_len));
    return ids;
}

template <typename T>
std::vector<int> GroundedModel<T>::answer_ids(std::string_view answer) const {
    auto ids = tokenize(answer, config_.vocab);
    if (static_cast<int>(ids.size()) > config_.max_answer_len) ids.resize(static_cast<size_t>(config_.max_answer_len));
    return ids;
}

// ---------------------------------------------------------------- generation

template <typename T>
std::vector<int> GroundedModel<T>::generate(const ImageSample& image, std::string_view question) const {
    if (question.empty()) throw std::invalid_argument("question must be non-empty");
    ag::NoGradGuard no_grad;
    const Tensor<T> vision = project_vision(encode_image_mllm(image));
    std::vector<int> ids = question_ids(question);
    ids.push_back(Vocabulary::kBos);
    std::vector<int> generated;
    const int V = config_.vocab.size();
    while (static_cast<int>(generated.size()) < config_.max_answer_len) {
        const Tensor<T> h = run_lm(vision, ids);
        const Tensor<T> last = ag::slice_rows(h, h.rows() - 1, h.rows());
        const Tensor<T> logits = ag::matmul_nt(last, lm_head_);
        int best = Vocabulary::kEos;
        T best_v = logits.values()[static_cast<size_t>(best)];
        for (int j = 0; j < V; ++j) {
            if (j == Vocabulary::kPad || j == Vocabulary::kBos) continue;
            if (logits.values()[static_cast<size_t>(j)] > best_v) {
                best_v = logits.values()[static_cast<size_t>(j)];
                best = j;
            }
        }
        if (best == Vocabulary::kEos) break;
        generated.push_back(best);
        ids.push_back(best);
    }
    return generated;
}

template <typename T>
LanguageEmbeddings<T> GroundedModel<T>::tag_embeddings(Tensor<T> instr, Tensor<T> gen) const {
    LanguageEmbeddings<T> out;
    out.provenance.assign(static_cast<size_t>(instr.rows()), Provenance::Instruction);
    out.provenance.insert(out.provenance.end(), static_cast<size_t>(gen.defined() ? gen.rows() : 0),
                          Provenance::Generated);
    out.vectors = gen.defined() && gen.rows() > 0 ? ag::concat_rows<T>({instr, gen}) : instr;
    return out;
}

template <typename T>
LanguageEmbeddings<T> GroundedModel<T>::build_language_embeddings(const ImageSample& image,
                                                                  std::span<const int> instruction_ids,
                                                                  std::span<const int> generated_ids) const {
    if (instruction_ids.empty()) throw std::invalid_argument("instruction_ids must be non-empty");
    const int ni = static_cast<int>(instruction_ids.size());
    const int ng = static_cast<int>(generated_ids.size());
    if (config_.injection == Injection::EmbeddingTable) {
        Tensor<T> instr = ag::gather_rows(tok_emb_, instruction_ids);
        Tensor<T> gen = ng > 0 ? ag::gather_rows(tok_emb_, generated_ids) : Tensor<T>();
        return tag_embeddings(instr, gen);
    }
    const Tensor<T> vision = project_vision(encode_image_mllm(image));
    std::vector<int> ids(instruction_ids.begin(), instruction_ids.end());
    ids.push_back(Vocabulary::kBos);
    ids.insert(ids.end(), generated_ids.begin(), generated_ids.end());
    const Tensor<T> h = run_lm(vision, ids);
    const int nv = vision.rows();
    Tensor<T> instr = ag::slice_rows(h, nv, nv + ni);
    Tensor<T> gen = ng > 0 ? ag::slice_rows(h, nv + ni + 1, nv + ni + 1 + ng) : Tensor<T>();
    return tag_embeddings(instr, gen);
}

template <typename T>
Tensor<T> GroundedModel<T>::decode_mask(const ImageSample& image, const LanguageEmbeddings<T>& lang) const {
    if (lang.size() == 0) throw std::invalid_argument("language embeddings must be non-empty");
    // Provenance-type embedding distinguishes instruction from generated vectors.
    std::vector<int> types;
    types.reserve(lang.provenance.size());
    for (auto p : lang.provenance) types.push_back(p == Provenance::Instruction ? 0 : 1);
    const Tensor<T> tokens = ag::add(lang.vectors, ag::gather_rows(type_emb_, types));

    Tensor<T> prompts = run_cross(prompt_cross_, queries_, tokens);
    prompts = run_mlp(prompt_mlp_, prompts);

    Tensor<T> img = linear(neck_, encode_image_seg(image));
    for (const auto& layer : dec_layers_) {
        prompts = run_cross(layer.token_to_image, prompts, img);
        prompts = run_mlp(layer.token_mlp, prompts);
        img = run_cross(layer.image_to_token, img, prompts);
        img = run_mlp(layer.image_mlp, img);
    }
    const Tensor<T> out = linear(pixel_head_, ag::layer_norm(img, dec_ln_g_, dec_ln_b_));
    return pixel_head(out, image.pixels, config_.seg_patch_size);
}

template <typename T>
GroundedOutput GroundedModel<T>::forward_grounded(const ImageSample& image, std::string_view question) const {
    ag::NoGradGuard no_grad;
    const std::vector<int> gen = generate(image, question);
    GroundedOutput out;
    out.answer = detokenize(gen, config_.vocab);
    const int h = image.pixels.height, w = image.pixels.width;
    if (text::contains_seg(out.answer)) {
        const auto qids = question_ids(question);
        const Tensor<T> logits = decode_mask(image, build_language_embeddings(image, qids, gen));
        Grid2<float> lg(h, w);
        Mask m(h, w);
        for (size_t i = 0; i < lg.data.size(); ++i) {
            lg.data[i] = static_cast<float>(logits.values()[i]);
            m.data[i] = ag::stable_sigmoid(logits.values()[i]) >= static_cast<T>(config_.mask_threshold) ? 1 : 0;
        }
        out.mask = std::move(m);
        out.mask_logits = std::move(lg);
    } else if (text::is_no_findings(out.answer)) {
        out.mask = Mask(h, w);
    }
    return out;
}

template <typename T>
TeacherOutputs<T> GroundedModel<T>::teacher_forward(const VqaSample& sample, bool with_seg) const {
    const auto qids = question_ids(sample.question);
    const auto aids = answer_ids(sample.answer);
    if (qids.empty()) throw std::invalid_argument("question must be non-empty");

    const Tensor<T> vision = project_vision(encode_image_mllm(sample.image));
    std::vector<int> ids = qids;
    ids.push_back(Vocabulary::kBos);
    ids.insert(ids.end(), aids.begin(), aids.end());
    const Tensor<T> h = run_lm(vision, ids);

    const int nv = vision.rows();
    const int nq = static_cast<int>(qids.size());
    const int na = static_cast<int>(aids.size());
    TeacherOutputs<T> out;
    out.text_logits = ag::matmul_nt(ag::slice_rows(h, nv + nq, nv + nq + na + 1), lm_head_);
    out.targets = aids;
    out.targets.push_back(Vocabulary::kEos);

    if (with_seg) {
        LanguageEmbeddings<T> lang;
        if (config_.injection == Injection::HiddenStates) {
            Tensor<T> instr = ag::slice_rows(h, nv, nv + nq);
            Tensor<T> gen = na > 0 ? ag::slice_rows(h, nv + nq + 1, nv + nq + 1 + na) : Tensor<T>();
            lang = tag_embeddings(instr, gen);
        } else {
            lang = build_language_embeddings(sample.image, qids, aids);
        }
        out.mask_logits = decode_mask(sample.image, lang);
    }
    return out;
}

template <typename Dst, typename Src>
void copy_parameters(GroundedModel<Dst>& dst, const GroundedModel<Src>& src) {
    auto& dp = dst.params();
    const auto& sp = src.params();
    if (dp.size() != sp.size()) throw std::invalid_argument("parameter layouts differ");
    for (size_t i = 0; i < dp.size(); ++i) {
        if (dp[i].name != sp[i].name || dp[i].tensor.size() != sp[i].tensor.size())
            throw std::invalid_argument("parameter layouts differ at " + sp[i].name);
        auto& dv = dp[i].tensor.mutable_values();
        const auto& sv = sp[i].tensor.values();
        for (size_t k = 0; k < dv.size(); ++k) dv[k] = static_cast<Dst>(sv[k]);
    }
}

template void copy_parameters(GroundedModel<double>&, const GroundedModel<float>&);
template void copy_parameters(GroundedModel<float>&, const GroundedModel<double>&);
template void copy_parameters(GroundedModel<float>&, const GroundedModel<float>&);

template class GroundedModel<float>;
template class GroundedModel<double>;

// ---------------------------------------------------------------- checkpoint

namespace {
constexpr char kCkptMagic[4] = {'G', 'K', 'C', 'K'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
}  // namespace

void save_checkpoint(const GroundedModel<float>& model, const std::filesystem::path& path) {
    nlohmann::json tensors = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& p : model.params()) {
        tensors[p.name] = {{"shape", {p.tensor.rows(), p.tensor.cols()}}, {"offset", offset}, {"frozen", p.frozen}};
        offset += p.tensor.size() * sizeof(float);
    }
    nlohmann::json cfg = model.config().to_json();
    nlohmann::json vocab = cfg["vocab"];
    cfg.erase("vocab");
    const std::string index = nlohmann::json{{"config", cfg}, {"vocab", vocab}, {"tensors", tensors}}.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write(kCkptMagic, 4);
    const std::uint64_t len = index.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(index.data(), static_cast<std::streamsize>(index.size()));
    for (const auto& p : model.params())
        out.write(reinterpret_cast<const char*>(p.tensor.data()), static_cast<std::streamsize>(p.tensor.size() * sizeof(float)));
    if (!out) throw std::runtime_error("checkpoint write failed: " + path.string());
}

GroundedModel<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCkptMagic, 4) != 0) throw std::runtime_error("not a checkpoint: " + path.string());
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string index(len, '\0');
    in.read(index.data(), static_cast<std::streamsize>(len));
    if (!in) throw std::runtime_error("truncated checkpoint index: " + path.string());
    const nlohmann::json j = nlohmann::json::parse(index);
    nlohmann::json cfg = j.at("config");
    cfg["vocab"] = j.at("vocab");
    GroundedModel<float> model(ModelConfig::from_json(cfg));

    const std::streamoff data_start = in.tellg();
    const auto& tensors = j.at("tensors");
    for (auto& p : model.params()) {
        if (!tensors.contains(p.name)) throw std::runtime_error("checkpoint lacks tensor " + p.name);
        const auto& t = tensors[p.name];
        const auto shape = t.at("shape").get<std::vector<int>>();
        if (shape.size() != 2 || shape[0] != p.tensor.rows() || shape[1] != p.tensor.cols())
            throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::uint64_t>()));
        auto& v = p.tensor.mutable_values();
        in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated checkpoint data for " + p.name);
    }
    return model;
}

}  // namespace groundkit::model
