#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "aggro/error.hpp"
#include "aggro/labels.hpp"
#include "aggro/translator.hpp"
#include "httplib.h"
#include "json.hpp"

// <resolv.h> defines _res as a macro, which collides with Eigen parameter names.
#ifdef _res
#undef _res
#endif

namespace aggro::http {

namespace fs = std::filesystem;

/// Splits "https://host:port/path" into the origin httplib wants and the request path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InputError("URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline std::optional<std::chrono::milliseconds> retry_after(const httplib::Response& r) {
  if (!r.has_header("Retry-After")) return std::nullopt;
  try {
    return std::chrono::milliseconds(static_cast<long long>(std::stod(r.get_header_value("Retry-After")) * 1000));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

/// JSON translation endpoint: POST {q, source, target, format} and read either
/// {"translatedText": ...} or {"data": {"translations": [{"translatedText": ...}]}}.
class HttpProvider : public TranslationProvider {
 public:
  HttpProvider(std::string endpoint, std::string api_key, std::chrono::seconds timeout = std::chrono::seconds(30))
      : endpoint_(std::move(endpoint)), api_key_(std::move(api_key)), timeout_(timeout) {
    std::tie(origin_, path_) = split_url(endpoint_);
  }

  std::string id() const override { return "http:" + endpoint_; }

  std::string translate(const std::string& text, Language source, Language target) override {
    httplib::Client cli(origin_);
    cli.set_connection_timeout(timeout_);
    cli.set_read_timeout(timeout_);
    httplib::Headers headers;
    nlohmann::json body{{"q", text}, {"source", to_string(source)}, {"target", to_string(target)}, {"format", "text"}};
    if (!api_key_.empty()) {
      headers.emplace("Authorization", "Bearer " + api_key_);
      body["api_key"] = api_key_;
    }
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw ProviderError("request to " + endpoint_ + " failed: " + httplib::to_string(res.error()), true);
    if (res->status == 429) throw ProviderError("rate limited by " + endpoint_, true, retry_after(*res));
    if (res->status >= 500)
      throw ProviderError("server error " + std::to_string(res->status) + " from " + endpoint_, true, retry_after(*res));
    if (res->status != 200)
      throw ProviderError("status " + std::to_string(res->status) + " from " + endpoint_ + ": " + res->body.substr(0, 200),
                          false);
    try {
      const auto j = nlohmann::json::parse(res->body);
      if (j.contains("translatedText")) return j["translatedText"].get<std::string>();
      return j.at("data").at("translations").at(0).at("translatedText").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError("unexpected response from " + endpoint_ + ": " + e.what(), false);
    }
  }

 private:
  std::string endpoint_, api_key_, origin_, path_;
  std::chrono::seconds timeout_;
};

/// Reads the API key named by `env`; empty when unset.
inline std::string api_key_from_env(const std::string& env) {
  const char* v = env.empty() ? nullptr : std::getenv(env.c_str());
  return v ? v : "";
}

/// Downloads one file to `dst` through a temporary; returns false on 404.
inline bool download(const std::string& url, const fs::path& dst) {
  const auto [origin, path] = split_url(url);
  httplib::Client cli(origin);
  cli.set_follow_location(true);
  cli.set_read_timeout(std::chrono::seconds(300));
  const fs::path tmp = dst.string() + ".part";
  std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + tmp.string());
  int status = 0;
  auto res = cli.Get(
      path, [&](const httplib::Response& r) {
        status = r.status;
        return true;
      },
      [&](const char* data, std::size_t n) {
        if (status == 200) out.write(data, static_cast<std::streamsize>(n));
        return static_cast<bool>(out);
      });
  out.close();
  if (!res) {
    fs::remove(tmp);
    throw IoError("download of " + url + " failed: " + httplib::to_string(res.error()));
  }
  if (res->status == 404) {
    fs::remove(tmp);
    return false;
  }
  if (res->status != 200) {
    fs::remove(tmp);
    throw IoError("download of " + url + " returned status " + std::to_string(res->status));
  }
  fs::rename(tmp, dst);
  return true;
}

/// Fetches a model repository from a Hugging Face style hub into cache_root/<id with '/' as '--'>.
/// Files already present are kept.
inline fs::path fetch_checkpoint(const std::string& id, const fs::path& cache_root,
                                 const std::string& hub = "https://huggingface.co") {
  std::string flat = id;
  for (std::size_t p; (p = flat.find('/')) != std::string::npos;) flat.replace(p, 1, "--");
  const fs::path dir = cache_root / flat;
  fs::create_directories(dir);
  const auto get = [&](const std::string& file) {
    if (fs::exists(dir / file)) return true;
    return download(hub + "/" + id + "/resolve/main/" + file, dir / file);
  };
  for (const char* required : {"config.json", "model.safetensors"})
    if (!get(required)) throw IoError("checkpoint '" + id + "' has no " + required + " on " + hub);
  const bool wordpiece = get("vocab.txt");
  const bool bpe = !wordpiece && get("vocab.json") && get("merges.txt");
  if (!wordpiece && !bpe) throw IoError("checkpoint '" + id + "' has no supported tokenizer files on " + hub);
  get("tokenizer_config.json");
  get("special_tokens_map.json");
  return dir;
}

}  // namespace aggro::http
