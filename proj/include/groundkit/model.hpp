#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "groundkit/autograd.hpp"
#include "groundkit/datamodel.hpp"

namespace groundkit::model {

class Vocabulary {
  public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSeg = 3;
    static constexpr int kUnk = 4;
    static constexpr int kFirstWord = 5;

    // Specials only.
    Vocabulary();
    // Specials followed by the sorted set of word tokens found in `texts`.
    static Vocabulary build(const std::vector<std::string>& texts);
    // Validates that the first five entries are the special tokens.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(std::string_view token) const;  // kUnk when absent
    const std::string& token(int id) const;
    const std::vector<std::string>& tokens() const { return tokens_; }

    nlohmann::json to_json() const { return tokens_; }
    static Vocabulary from_json(const nlohmann::json& j);

    bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

  private:
    std::vector<std::string> tokens_;
};

// Vocabulary over every question and answer of a manifest.
Vocabulary vocabulary_for(const DatasetManifest& manifest);

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);
// Drops PAD/BOS/EOS; renders [SEG] literally.
std::string detokenize(std::span<const int> ids, const Vocabulary& vocab);

// Which vectors are handed to the prompt encoder.
enum class Injection {
    HiddenStates,    // final-layer LM hidden states at instruction and generated positions
    EmbeddingTable,  // rows of the LM token-embedding table
};

struct ModelConfig {
    int image_height = 64;
    int image_width = 64;
    int patch_size = 8;      // MLLM vision encoder
    int seg_patch_size = 4;  // segmentation-branch vision encoder
    int d_model = 32;
    int n_heads = 4;
    int n_layers_vision = 1;
    int n_layers_lm = 2;
    int n_layers_mask_decoder = 1;
    int n_prompt_queries = 4;
    int mlp_ratio = 2;
    int max_question_len = 24;
    int max_answer_len = 16;
    double mask_threshold = 0.5;
    std::optional<int> adapter_rank;
    Injection injection = Injection::HiddenStates;
    std::uint64_t init_seed = 42;
    Vocabulary vocab;

    // Throws std::invalid_argument on a violated invariant.
    void validate() const;
    int n_vision_tokens() const { return (image_height / patch_size) * (image_width / patch_size); }
    int n_seg_tokens() const { return (image_height / seg_patch_size) * (image_width / seg_patch_size); }
    int max_sequence() const { return n_vision_tokens() + max_question_len + 1 + max_answer_len; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

enum class ParamGroup {
    MllmVision,
    Projector,
    LmEmbedding,
    LmBase,
    LmAdapter,
    LmHead,
    SegVision,
    PromptEncoder,
    MaskDecoder,
};
std::string_view to_string(ParamGroup g);

template <typename T>
struct Param {
    std::string name;
    ParamGroup group;
    bool frozen = false;
    ag::Tensor<T> tensor;
};

enum class Provenance { Instruction, Generated };

template <typename T>
struct LanguageEmbeddings {
    ag::Tensor<T> vectors;  // n x d_model
    std::vector<Provenance> provenance;
    int size() const { return vectors.defined() ? vectors.rows() : 0; }
};

// Row-vector convention of a column-major update: y = x W^T + x A^T B^T,
// i.e. y = (W + B A) x per input vector.
template <typename T>
struct LinearParams {
    ag::Tensor<T> weight;  // out x in
    ag::Tensor<T> bias;    // 1 x out, optional
    ag::Tensor<T> lora_a;  // rank x in, optional
    ag::Tensor<T> lora_b;  // out x rank, optional
};

template <typename T>
struct TeacherOutputs {
    ag::Tensor<T> text_logits;  // (answer + 1) x vocab
    std::vector<int> targets;   // answer ids followed by EOS
    std::optional<ag::Tensor<T>> mask_logits;
};

// Toy grounded interpreter: MLLM (frozen vision encoder, projector, causal LM)
// plus a segmentation branch (frozen vision encoder, prompt encoder, mask
// decoder) prompted by language embeddings.
template <typename T>
class GroundedModel {
  public:
    explicit GroundedModel(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::vector<Param<T>>& params() { return params_; }
    const std::vector<Param<T>>& params() const { return params_; }
    Param<T>& param(std::string_view name);
    const Param<T>& param(std::string_view name) const;
    std::vector<ag::Tensor<T>> trainable() const;
    size_t count_parameters(std::optional<ParamGroup> group = std::nullopt, bool trainable_only = false) const;

    // n_vision_tokens x d_model, MLLM vision encoder output (before the projector).
    ag::Tensor<T> encode_image_mllm(const ImageSample& image) const;
    ag::Tensor<T> encode_image_seg(const ImageSample& image) const;

    // Greedy decoding; stops at EOS or max_answer_len. Returned ids exclude EOS.
    std::vector<int> generate(const ImageSample& image, std::string_view question) const;

    LanguageEmbeddings<T> build_language_embeddings(const ImageSample& image, std::span<const int> instruction_ids,
                                                    std::span<const int> generated_ids) const;

    // Image-shaped mask logits.
    ag::Tensor<T> decode_mask(const ImageSample& image, const LanguageEmbeddings<T>& lang) const;

    GroundedOutput forward_grounded(const ImageSample& image, std::string_view question) const;

    // Teacher-forced pass; the segmentation branch runs only when `with_seg`.
    TeacherOutputs<T> teacher_forward(const VqaSample& sample, bool with_seg) const;

    std::vector<int> question_ids(std::string_view question) const;
    std::vector<int> answer_ids(std::string_view answer) const;

  private:
    struct Block {
        ag::Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
        LinearParams<T> q, k, v, o, fc1, fc2;
    };
    struct CrossBlock {
        ag::Tensor<T> lnq_g, lnq_b, lnkv_g, lnkv_b;
        LinearParams<T> q, k, v, o;
    };
    struct MlpBlock {
        ag::Tensor<T> ln_g, ln_b;
        LinearParams<T> fc1, fc2;
    };
    struct DecoderLayer {
        CrossBlock token_to_image;
        CrossBlock image_to_token;
        MlpBlock token_mlp;
        MlpBlock image_mlp;
    };

    ag::Tensor<T> add_param(const std::string& name, ParamGroup group, int rows, int cols, double stddev,
                            bool frozen, double mean = 0.0);
    LinearParams<T> make_linear(const std::string& name, ParamGroup group, int out, int in, bool bias, bool frozen,
                                bool adapt, double gain = 1.0);
    Block make_block(const std::string& name, ParamGroup group, bool frozen, bool adapt);
    CrossBlock make_cross(const std::string& name, ParamGroup group);
    MlpBlock make_mlp(const std::string& name, ParamGroup group);

    ag::Tensor<T> linear(const LinearParams<T>& p, const ag::Tensor<T>& x) const;
    ag::Tensor<T> attention(const LinearParams<T>& q, const LinearParams<T>& k, const LinearParams<T>& v,
                            const LinearParams<T>& o, const ag::Tensor<T>& xq, const ag::Tensor<T>& xkv,
                            bool causal) const;
    ag::Tensor<T> run_block(const Block& b, const ag::Tensor<T>& x, bool causal) const;
    ag::Tensor<T> run_cross(const CrossBlock& b, const ag::Tensor<T>& xq, const ag::Tensor<T>& xkv) const;
    ag::Tensor<T> run_mlp(const MlpBlock& b, const ag::Tensor<T>& x) const;
    ag::Tensor<T> encode_patches(const Image& image, int patch, const ag::Tensor<T>& w, const ag::Tensor<T>& b,
                                 const ag::Tensor<T>& pos, const std::vector<Block>& blocks) const;
    // Final hidden states for [vision tokens; ids].
    ag::Tensor<T> run_lm(const ag::Tensor<T>& vision_tokens, std::span<const int> ids) const;
    ag::Tensor<T> project_vision(const ag::Tensor<T>& vision_tokens) const;
    LanguageEmbeddings<T> tag_embeddings(ag::Tensor<T> instr, ag::Tensor<T> gen) const;
    void check_image(const ImageSample& image) const;

    ModelConfig config_;
    std::vector<Param<T>> params_;

    // MLLM
    ag::Tensor<T> vis_patch_w_, vis_patch_b_, vis_pos_;
    std::vector<Block> vis_blocks_;
    LinearParams<T> proj1_, proj2_;
    ag::Tensor<T> tok_emb_, lm_pos_;
    std::vector<Block> lm_blocks_;
    ag::Tensor<T> lnf_g_, lnf_b_, lm_head_;

    // Segmentation branch
    ag::Tensor<T> seg_patch_w_, seg_patch_b_, seg_pos_;
    std::vector<Block> seg_blocks_;
    ag::Tensor<T> type_emb_, queries_;
    CrossBlock prompt_cross_;
    MlpBlock prompt_mlp_;
    LinearParams<T> neck_;
    std::vector<DecoderLayer> dec_layers_;
    ag::Tensor<T> dec_ln_g_, dec_ln_b_;
    LinearParams<T> pixel_head_;
};

// Per-pixel features appended to the mask head: intensity and squared intensity.
inline constexpr int kPixelFeatures = 2;

// Expands per-token head outputs (n_tokens x (patch^2 + kPixelFeatures)) to
// image-resolution logits: logit(r, c) = spatial[r%p, c%p] + sum_f gain_f * feature_f(pixel).
template <typename T>
ag::Tensor<T> pixel_head(const ag::Tensor<T>& token_out, const Image& image, int patch);

// y = base x + B (A x), column-vector convention. Throws on shape mismatch.
std::vector<double> apply_adapter(const std::vector<double>& base, int out, int in, const std::vector<double>& a,
                                  const std::vector<double>& b, int rank, const std::vector<double>& x);

// Checkpoint archive: magic "GKCK", u64 index length, JSON index
// {"config", "vocab", "tensors": {name: {"shape", "offset"}}}, then the
// tensors as little-endian f32 at the listed byte offsets.
void save_checkpoint(const GroundedModel<float>& model, const std::filesystem::path& path);
GroundedModel<float> load_checkpoint(const std::filesystem::path& path);

// Copies parameter values between precisions (used by double-precision checks).
template <typename Dst, typename Src>
void copy_parameters(GroundedModel<Dst>& dst, const GroundedModel<Src>& src);

extern template class GroundedModel<float>;
extern template class GroundedModel<double>;

}  // namespace groundkit::model
