#include "svq/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include "svq/util.hpp"

namespace svq {

namespace {

constexpr const char* kMagic = "svq-checkpoint 1";

std::size_t meta_size(const Checkpoint& c, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(c.get(key)));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint meta '" + key + "' is not an integer");
  }
}

double meta_double(const Checkpoint& c, const std::string& key) {
  try {
    return parse_double(c.get(key));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception&) {
    throw CheckpointError("checkpoint meta '" + key + "' is not a number");
  }
}

void add_geometry(Checkpoint& c, const ClipGeometry& g, std::size_t patch) {
  c.meta.emplace_back("frames", std::to_string(g.frames));
  c.meta.emplace_back("height", std::to_string(g.height));
  c.meta.emplace_back("width", std::to_string(g.width));
  c.meta.emplace_back("channels", std::to_string(g.channels));
  c.meta.emplace_back("patch", std::to_string(patch));
}

ClipGeometry read_geometry(const Checkpoint& c) {
  return {meta_size(c, "frames"), meta_size(c, "height"), meta_size(c, "width"), meta_size(c, "channels")};
}

}  // namespace

const std::string& Checkpoint::get(const std::string& key) const {
  for (const auto& [k, v] : meta) {
    if (k == key) return v;
  }
  throw CheckpointError("checkpoint has no meta entry '" + key + "'");
}

std::uint64_t Checkpoint::vocabulary_hash() const { return Vocabulary::from_words(vocabulary).hash(); }

std::string to_text(const Checkpoint& ckpt) {
  std::ostringstream os;
  os << kMagic << '\n' << "kind " << ckpt.kind << '\n';
  for (const auto& [k, v] : ckpt.meta) os << "meta " << k << ' ' << v << '\n';
  os << "vocab_hash " << hex64(ckpt.vocabulary_hash()) << '\n';
  os << "vocab " << ckpt.vocabulary.size() << '\n';
  for (const auto& w : ckpt.vocabulary) os << w << '\n';
  os << "params " << ckpt.params.size() << '\n';
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    const Array& a = ckpt.params.value(i);
    os << "param " << ckpt.params.name(i) << ' ' << a.rank();
    for (auto d : a.shape()) os << ' ' << d;
    os << '\n';
    for (std::size_t j = 0; j < a.size(); ++j) os << (j ? " " : "") << format_double(a[j]);
    os << '\n';
  }
  os << "end\n";
  return os.str();
}

Checkpoint checkpoint_from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  const auto next = [&](const char* what) {
    if (!std::getline(is, line)) throw CheckpointError(std::string("checkpoint truncated before ") + what);
    return line;
  };
  if (next("header") != kMagic) throw CheckpointError("not a checkpoint file (bad header)");
  Checkpoint c;
  std::istringstream kind(next("kind"));
  std::string tag;
  kind >> tag >> c.kind;
  if (tag != "kind") throw CheckpointError("checkpoint: expected 'kind'");

  std::string stored_hash;
  for (;;) {
    std::istringstream ls(next("vocabulary"));
    ls >> tag;
    if (tag == "meta") {
      std::string k, v;
      ls >> k;
      std::getline(ls >> std::ws, v);
      c.meta.emplace_back(k, v);
    } else if (tag == "vocab_hash") {
      ls >> stored_hash;
    } else if (tag == "vocab") {
      std::size_t n = 0;
      ls >> n;
      for (std::size_t i = 0; i < n; ++i) c.vocabulary.push_back(next("vocabulary word"));
      break;
    } else {
      throw CheckpointError("checkpoint: unexpected line '" + line + "'");
    }
  }
  if (stored_hash != hex64(c.vocabulary_hash())) {
    throw CheckpointError("checkpoint vocabulary hash mismatch: stored " + stored_hash + ", computed " +
                          hex64(c.vocabulary_hash()));
  }

  std::istringstream ps(next("parameters"));
  std::size_t count = 0;
  ps >> tag >> count;
  if (tag != "params") throw CheckpointError("checkpoint: expected 'params'");
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream hs(next("parameter header"));
    std::string name;
    std::size_t rank = 0;
    hs >> tag >> name >> rank;
    if (tag != "param" || !hs) throw CheckpointError("checkpoint: bad parameter header '" + line + "'");
    Shape shape(rank);
    for (auto& d : shape) hs >> d;
    std::istringstream vs(next("parameter values"));
    std::vector<double> values;
    values.reserve(shape_size(shape));
    for (std::string tok; vs >> tok;) values.push_back(parse_double(tok));
    if (values.size() != shape_size(shape)) {
      throw CheckpointError("checkpoint: parameter '" + name + "' has " + std::to_string(values.size()) +
                            " values for shape " + shape_str(shape));
    }
    c.params.add(name, Array(std::move(shape), std::move(values)));
  }
  if (next("end marker") != "end") throw CheckpointError("checkpoint: missing end marker");
  return c;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << to_text(ckpt);
  if (!out) throw CheckpointError("failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return checkpoint_from_text(os.str());
}

std::string tokenizer_fingerprint(const TokenizerConfig& c, std::uint64_t vocab_hash) {
  std::ostringstream os;
  os << "frames=" << c.geometry.frames << " size=" << c.geometry.height << "x" << c.geometry.width << "x"
     << c.geometry.channels << " patch=" << c.patch << " codes=" << c.codebook_size << "x" << c.code_dim
     << " vocab=" << hex64(vocab_hash);
  return os.str();
}

Checkpoint make_tokenizer_checkpoint(const FrozenTokenizer& tokenizer, const Vocabulary& vocab) {
  const TokenizerConfig& t = tokenizer.config();
  if (t.vocab_size != vocab.content_size()) {
    throw CheckpointError("tokenizer vocabulary size " + std::to_string(t.vocab_size) + " does not match vocabulary (" +
                          std::to_string(vocab.content_size()) + " words)");
  }
  Checkpoint c;
  c.kind = "tokenizer";
  add_geometry(c, t.geometry, t.patch);
  c.meta.emplace_back("codebook_size", std::to_string(t.codebook_size));
  c.meta.emplace_back("code_dim", std::to_string(t.code_dim));
  c.meta.emplace_back("hidden", std::to_string(t.hidden));
  c.meta.emplace_back("heads", std::to_string(t.heads));
  c.meta.emplace_back("encoder_layers", std::to_string(t.encoder_layers));
  c.meta.emplace_back("decoder_layers", std::to_string(t.decoder_layers));
  c.meta.emplace_back("vocab_size", std::to_string(t.vocab_size));
  c.meta.emplace_back("focal_gamma", format_double(t.focal_gamma));
  c.meta.emplace_back("codebook_weight", format_double(t.codebook_weight));
  c.meta.emplace_back("commitment_weight", format_double(t.commitment_weight));
  c.vocabulary.assign(vocab.words().begin() + Vocabulary::kSpecials, vocab.words().end());
  c.params = tokenizer.params();
  return c;
}

FrozenTokenizer load_tokenizer(const Checkpoint& c) {
  if (c.kind != "tokenizer") throw CheckpointError("expected a tokenizer checkpoint, got '" + c.kind + "'");
  TokenizerConfig t;
  t.geometry = read_geometry(c);
  t.patch = meta_size(c, "patch");
  t.codebook_size = meta_size(c, "codebook_size");
  t.code_dim = meta_size(c, "code_dim");
  t.hidden = meta_size(c, "hidden");
  t.heads = meta_size(c, "heads");
  t.encoder_layers = meta_size(c, "encoder_layers");
  t.decoder_layers = meta_size(c, "decoder_layers");
  t.vocab_size = meta_size(c, "vocab_size");
  t.focal_gamma = meta_double(c, "focal_gamma");
  t.codebook_weight = meta_double(c, "codebook_weight");
  t.commitment_weight = meta_double(c, "commitment_weight");
  if (t.vocab_size != c.vocabulary.size()) throw CheckpointError("tokenizer checkpoint: vocabulary size mismatch");
  return FrozenTokenizer(t, c.params);
}

Checkpoint make_vlm_checkpoint(const VlmModel& model, const Vocabulary& vocab, const std::string& tokenizer_fp) {
  const VlmConfig& v = model.config;
  if (v.vocab_size != vocab.size()) throw CheckpointError("model vocabulary size does not match vocabulary");
  Checkpoint c;
  c.kind = "vlm";
  add_geometry(c, v.geometry, v.patch);
  c.meta.emplace_back("video_hidden", std::to_string(v.video_hidden));
  c.meta.emplace_back("text_hidden", std::to_string(v.text_hidden));
  c.meta.emplace_back("fusion_hidden", std::to_string(v.fusion_hidden));
  c.meta.emplace_back("heads", std::to_string(v.heads));
  c.meta.emplace_back("video_layers", std::to_string(v.video_layers));
  c.meta.emplace_back("text_layers", std::to_string(v.text_layers));
  c.meta.emplace_back("fusion_layers", std::to_string(v.fusion_layers));
  c.meta.emplace_back("max_caption", std::to_string(v.max_caption));
  c.meta.emplace_back("vocab_size", std::to_string(v.vocab_size));
  c.meta.emplace_back("codebook_size", std::to_string(v.codebook_size));
  c.meta.emplace_back("tokenizer", tokenizer_fp);
  c.vocabulary.assign(vocab.words().begin() + Vocabulary::kSpecials, vocab.words().end());
  c.params = model.params;
  return c;
}

VlmModel load_vlm(const Checkpoint& c) {
  if (c.kind != "vlm") throw CheckpointError("expected a vlm checkpoint, got '" + c.kind + "'");
  VlmModel m;
  m.config.geometry = read_geometry(c);
  m.config.patch = meta_size(c, "patch");
  m.config.video_hidden = meta_size(c, "video_hidden");
  m.config.text_hidden = meta_size(c, "text_hidden");
  m.config.fusion_hidden = meta_size(c, "fusion_hidden");
  m.config.heads = meta_size(c, "heads");
  m.config.video_layers = meta_size(c, "video_layers");
  m.config.text_layers = meta_size(c, "text_layers");
  m.config.fusion_layers = meta_size(c, "fusion_layers");
  m.config.max_caption = meta_size(c, "max_caption");
  m.config.vocab_size = meta_size(c, "vocab_size");
  m.config.codebook_size = meta_size(c, "codebook_size");
  m.config.validate();
  if (m.config.vocab_size != c.vocabulary.size() + Vocabulary::kSpecials) {
    throw CheckpointError("vlm checkpoint: vocabulary size mismatch");
  }
  m.params = c.params;
  return m;
}

}  // namespace svq
