#include "a2t/wire.hpp"

namespace a2t::wire {

namespace {

json token_ids(const Tokens& tokens) {
  json ids = json::array();
  for (const Token& t : tokens) ids.push_back(t.id);
  return ids;
}

json token_pairs(const Tokens& tokens) {
  json out = json::array();
  for (const Token& t : tokens) out.push_back(json::array({t.id, t.surface}));
  return out;
}

// Accepts plain ids or [id, surface] pairs.
Tokens tokens_from(const json& arr) {
  if (!arr.is_array()) throw InvalidInput("tokens must be an array");
  Tokens out;
  for (const json& t : arr) {
    if (t.is_number_integer()) {
      out.push_back({t.get<int>(), {}});
    } else if (t.is_array() && t.size() >= 2 && t[0].is_number_integer() && t[1].is_string()) {
      out.push_back({t[0].get<int>(), t[1].get<std::string>()});
    } else {
      throw InvalidInput("token entries must be ids or [id, surface] pairs");
    }
  }
  return out;
}

template <typename T>
T field(const json& params, const char* key) {
  auto it = params.find(key);
  if (it == params.end()) throw InvalidInput(std::string("missing parameter '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw InvalidInput(std::string("parameter '") + key + "' has the wrong type");
  }
}

json error_response(const json& id, const char* code, const std::string& message) {
  return {{"id", id}, {"error", {{"code", code}, {"message", message}}}};
}

// Remote-side failures carry a message; decode them into the right exception.
template <typename Fn>
auto decoding(const std::string& method, Fn&& fn) {
  try {
    return fn();
  } catch (const RpcError&) {
    throw;
  } catch (const std::exception& e) {
    throw ProtocolError(method, std::string("malformed result: ") + e.what());
  }
}

}  // namespace

json image_to_json(const Image& img) {
  return {{"w", img.width}, {"h", img.height}, {"data", base64_encode(img.pixels)}};
}

Image image_from_json(const json& doc) {
  if (!doc.is_object()) throw InvalidInput("image must be an object {w, h, data}");
  const int w = field<int>(doc, "w");
  const int h = field<int>(doc, "h");
  if (w <= 0 || h <= 0) throw InvalidInput("image dimensions must be positive");
  Image img(w, h);
  std::vector<std::uint8_t> bytes = base64_decode(field<std::string>(doc, "data"));
  if (bytes.size() != img.pixels.size())
    throw InvalidInput("image payload has " + std::to_string(bytes.size()) + " bytes, expected " +
                       std::to_string(img.pixels.size()));
  img.pixels = std::move(bytes);
  return img;
}

json BackendServer::dispatch(const std::string& method, const json& params) const {
  if (method == "lm.info") return {{"eos_id", lm_.eos_id()}};
  if (method == "lm.tokenize") return {{"tokens", token_pairs(lm_.tokenize(field<std::string>(params, "text")))}};
  if (method == "lm.detokenize") return {{"text", lm_.detokenize(tokens_from(params.at("tokens")))}};
  if (method == "lm.next") {
    const TokenDist d = lm_.next_dist(tokens_from(params.at("tokens")), field<int>(params, "top_k"));
    json top = json::array();
    for (const TokenProb& tp : d.entries) top.push_back(json::array({tp.token.id, tp.token.surface, tp.prob}));
    return {{"top", std::move(top)}};
  }
  if (method == "lm.continue") {
    const Tokens out = lm_.continue_sentence(tokens_from(params.at("tokens")), field<double>(params, "top_p"),
                                             field<int>(params, "max_len"), field<std::uint64_t>(params, "seed"));
    return {{"tokens", token_pairs(out)}};
  }
  if (method == "match.scores") {
    const Image img = image_from_json(params.at("image"));
    return {{"scores", matcher_.cosine_scores(img, field<std::vector<std::string>>(params, "sentences"))}};
  }
  if (method == "vqa.infer") {
    const Image img = image_from_json(params.at("image"));
    VqaOutput out = vqa_.infer(img, field<std::string>(params, "question"));
    return {{"answer", out.answer}, {"attention", to_json(out.stack)}};
  }
  throw std::out_of_range(method);
}

json BackendServer::handle(const json& request) const {
  const json id = request.contains("id") ? request["id"] : json(nullptr);
  if (!request.contains("method") || !request["method"].is_string())
    return error_response(id, "invalid_request", "missing method");
  const std::string method = request["method"].get<std::string>();
  const json params = request.value("params", json::object());
  try {
    return {{"id", id}, {"result", dispatch(method, params)}};
  } catch (const std::out_of_range&) {
    return error_response(id, "unknown_method", "unknown method '" + method + "'");
  } catch (const Unanswerable& e) {
    return error_response(id, "unanswerable", e.what());
  } catch (const InvalidInput& e) {
    return error_response(id, "invalid_params", e.what());
  } catch (const json::exception& e) {
    return error_response(id, "invalid_params", e.what());
  } catch (const std::exception& e) {
    return error_response(id, "internal", e.what());
  }
}

WireLanguageModel::WireLanguageModel(RpcClient& client) : client_(client) {
  const json info = client_.call("lm.info", json::object());
  eos_id_ = decoding("lm.info", [&] { return info.at("eos_id").get<int>(); });
}

Tokens WireLanguageModel::tokenize(const std::string& text) const {
  const json r = client_.call("lm.tokenize", {{"text", text}});
  return decoding("lm.tokenize", [&] { return tokens_from(r.at("tokens")); });
}

std::string WireLanguageModel::detokenize(const Tokens& tokens) const {
  const json r = client_.call("lm.detokenize", {{"tokens", token_pairs(tokens)}});
  return decoding("lm.detokenize", [&] { return r.at("text").get<std::string>(); });
}

TokenDist WireLanguageModel::next_dist(const Tokens& context, int top_k) const {
  const json r = client_.call("lm.next", {{"tokens", token_ids(context)}, {"top_k", top_k}});
  return decoding("lm.next", [&] {
    TokenDist d;
    for (const json& e : r.at("top"))
      d.entries.push_back({{e.at(0).get<int>(), e.at(1).get<std::string>()}, e.at(2).get<double>()});
    return d;
  });
}

Tokens WireLanguageModel::continue_sentence(const Tokens& context, double top_p, int max_len,
                                            std::uint64_t seed) const {
  const json r = client_.call(
      "lm.continue", {{"tokens", token_ids(context)}, {"top_p", top_p}, {"max_len", max_len}, {"seed", seed}});
  return decoding("lm.continue", [&] { return tokens_from(r.at("tokens")); });
}

std::vector<double> WireMatcher::cosine_scores(const Image& image, const std::vector<std::string>& sentences) const {
  const json r = client_.call("match.scores", {{"image", image_to_json(image)}, {"sentences", sentences}});
  return decoding("match.scores", [&] { return r.at("scores").get<std::vector<double>>(); });
}

VqaOutput WireVqa::infer(const Image& image, const std::string& question) const {
  const json r = client_.call("vqa.infer", {{"image", image_to_json(image)}, {"question", question}});
  return decoding("vqa.infer", [&] {
    return VqaOutput{r.at("answer").get<std::string>(), attention_stack_from_json(r.at("attention"))};
  });
}

}  // namespace a2t::wire
