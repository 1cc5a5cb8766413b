#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "aggro/error.hpp"
#include "aggro/hash.hpp"
#include "aggro/labels.hpp"
#include "json.hpp"

namespace aggro {

struct TranslationRequest {
  std::string text;
  Language source = Language::en;
  Language target = Language::en;

  friend bool operator==(const TranslationRequest&, const TranslationRequest&) = default;
};

inline void validate(const TranslationRequest& r) {
  if (r.source == r.target)
    throw InputError("translation source and target are both " + std::string(to_string(r.source)));
  if (r.text.empty()) throw InputError("cannot translate empty text");
}

inline std::string cache_key(const TranslationRequest& r) {
  return to_hex(Fnv1a{}.field(r.text).field(to_string(r.source)).field(to_string(r.target)).digest());
}

/// Raised by providers. Transient errors are retried; permanent ones are not.
class ProviderError : public Error {
 public:
  ProviderError(const std::string& what, bool transient,
                std::optional<std::chrono::milliseconds> retry_after = std::nullopt)
      : Error(what), transient_(transient), retry_after_(retry_after) {}

  bool transient() const { return transient_; }
  std::optional<std::chrono::milliseconds> retry_after() const { return retry_after_; }

 private:
  bool transient_;
  std::optional<std::chrono::milliseconds> retry_after_;
};

/// One adapter per translation backend.
class TranslationProvider {
 public:
  virtual ~TranslationProvider() = default;
  virtual std::string id() const = 0;
  virtual bool supports(Language, Language) const { return true; }
  virtual std::string translate(const std::string& text, Language source, Language target) = 0;
};

/// Offline provider for tests and CI. Whole-text dictionary hits win; otherwise
/// each whitespace token is looked up and unknown tokens get a "[src]" prefix,
/// which reverse_fallback() undoes. Also counts calls, probes concurrency and
/// can inject failures.
class StubProvider : public TranslationProvider {
 public:
  explicit StubProvider(std::map<std::string, std::string> dictionary = {}, std::string id = "stub")
      : dictionary_(std::move(dictionary)), id_(std::move(id)) {}

  std::string id() const override { return id_; }

  std::string translate(const std::string& text, Language source, Language target) override {
    const std::size_t call = calls_.fetch_add(1);
    const int now = in_flight_.fetch_add(1) + 1;
    {
      std::lock_guard lock(mu_);
      max_in_flight_ = std::max(max_in_flight_, now);
    }
    struct Leave {
      std::atomic<int>& n;
      ~Leave() { n.fetch_sub(1); }
    } leave{in_flight_};
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    {
      std::lock_guard lock(mu_);
      if (fail_calls_.contains(call)) throw ProviderError("injected failure on call " + std::to_string(call), true);
      if (auto it = fail_texts_.find(text); it != fail_texts_.end())
        throw ProviderError("injected failure for '" + text + "'", it->second);
      if (fail_after_ && call >= *fail_after_) throw ProviderError("injected outage", true);
      if (rate_limit_remaining_ > 0) {
        --rate_limit_remaining_;
        throw ProviderError("rate limited", true, rate_limit_retry_after_);
      }
    }
    if (auto it = dictionary_.find(text); it != dictionary_.end()) return it->second;
    std::istringstream words(text);
    std::string word, out;
    while (words >> word) {
      if (!out.empty()) out.push_back(' ');
      if (auto it = dictionary_.find(word); it != dictionary_.end())
        out += it->second;
      else
        out += fallback_prefix(source, target) + word;
    }
    return out;
  }

  static std::string fallback_prefix(Language source, Language) { return "[" + std::string(to_string(source)) + "]"; }

  /// Strips the fallback tags, recovering untranslated source tokens.
  static std::string reverse_fallback(const std::string& translated, Language source) {
    const std::string tag = fallback_prefix(source, source);
    std::string out = translated;
    for (std::size_t pos; (pos = out.find(tag)) != std::string::npos;) out.erase(pos, tag.size());
    return out;
  }

  /// Permanent failures are not retried by the service.
  void fail_on_text(const std::string& text, bool transient = false) {
    std::lock_guard lock(mu_);
    fail_texts_[text] = transient;
  }
  void fail_on_call(std::size_t call_index) {
    std::lock_guard lock(mu_);
    fail_calls_.insert(call_index);
  }
  /// Every call with index >= n fails (simulated outage).
  void fail_after(std::optional<std::size_t> n) {
    std::lock_guard lock(mu_);
    fail_after_ = n;
  }
  void rate_limit(int times, std::chrono::milliseconds retry_after) {
    std::lock_guard lock(mu_);
    rate_limit_remaining_ = times;
    rate_limit_retry_after_ = retry_after;
  }
  void set_delay(std::chrono::milliseconds d) { delay_ = d; }

  std::size_t calls() const { return calls_.load(); }
  int max_observed_in_flight() const {
    std::lock_guard lock(mu_);
    return max_in_flight_;
  }
  void reset_counters() {
    calls_ = 0;
    std::lock_guard lock(mu_);
    max_in_flight_ = 0;
  }

 private:
  std::map<std::string, std::string> dictionary_;
  std::string id_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<int> in_flight_{0};
  mutable std::mutex mu_;
  int max_in_flight_ = 0;
  std::set<std::size_t> fail_calls_;
  std::map<std::string, bool> fail_texts_;
  std::optional<std::size_t> fail_after_;
  int rate_limit_remaining_ = 0;
  std::chrono::milliseconds rate_limit_retry_after_{0};
  std::chrono::milliseconds delay_{0};
};

struct TranslationCacheEntry {
  std::string key;
  TranslationRequest request;
  std::string translated_text;
  std::string provider_id;
  std::int64_t timestamp = 0;  // unix seconds
};

/// In-memory cache optionally backed by an append-only JSON-lines file.
/// Each line: {key, source, target, text, translated_text, provider_id, timestamp}.
class TranslationCache {
 public:
  TranslationCache() = default;

  explicit TranslationCache(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(*file_);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        // A torn final write from an interrupted run; later lines still count.
        continue;
      }
      TranslationCacheEntry e;
      e.request.text = j.at("text").get<std::string>();
      e.request.source = language_or_throw(j.at("source").get<std::string>());
      e.request.target = language_or_throw(j.at("target").get<std::string>());
      e.key = j.at("key").get<std::string>();
      if (e.key != cache_key(e.request))
        throw InputError(file_->string() + ":" + std::to_string(lineno) + ": cache key does not match request");
      e.translated_text = j.at("translated_text").get<std::string>();
      e.provider_id = j.value("provider_id", "");
      e.timestamp = j.value("timestamp", std::int64_t{0});
      entries_[e.key] = std::move(e);
    }
  }

  std::optional<std::string> lookup(const TranslationRequest& r) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(cache_key(r));
    if (it == entries_.end() || !(it->second.request == r)) return std::nullopt;
    return it->second.translated_text;
  }

  void store(const TranslationRequest& r, const std::string& translated, const std::string& provider_id) {
    TranslationCacheEntry e{cache_key(r), r, translated, provider_id,
                            std::chrono::duration_cast<std::chrono::seconds>(
                                std::chrono::system_clock::now().time_since_epoch())
                                .count()};
    std::lock_guard lock(mu_);
    if (auto it = entries_.find(e.key); it != entries_.end() && !(it->second.request == r))
      throw ComputeError("translation cache key collision for key " + e.key);
    if (file_) {
      std::ofstream out(*file_, std::ios::app);
      if (!out) throw IoError("cannot append to translation cache " + file_->string());
      nlohmann::json j{{"key", e.key},
                       {"source", to_string(r.source)},
                       {"target", to_string(r.target)},
                       {"text", r.text},
                       {"translated_text", translated},
                       {"provider_id", provider_id},
                       {"timestamp", e.timestamp}};
      out << j.dump() << '\n';
    }
    entries_[e.key] = std::move(e);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  std::optional<std::filesystem::path> file_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, TranslationCacheEntry> entries_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{250};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{8000};
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Counting gate that bounds concurrent provider calls.
class InFlightGate {
 public:
  explicit InFlightGate(std::size_t limit) : limit_(std::max<std::size_t>(1, limit)) {}

  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      --active_;
    }
    cv_.notify_one();
  }

 private:
  std::size_t limit_;
  std::size_t active_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

/// Cached, rate-limited, retrying front end over a TranslationProvider.
/// Safe for concurrent callers.
class TranslationService {
 public:
  TranslationService(std::shared_ptr<TranslationProvider> provider, std::shared_ptr<TranslationCache> cache,
                     RetryPolicy retry = {}, std::size_t max_in_flight = 4, Sleeper sleeper = real_sleeper())
      : provider_(std::move(provider)),
        cache_(cache ? std::move(cache) : std::make_shared<TranslationCache>()),
        retry_(retry),
        gate_(max_in_flight),
        sleep_(std::move(sleeper)) {
    if (!provider_) throw InputError("translation service needs a provider");
  }

  std::string translate(const TranslationRequest& request) {
    validate(request);
    if (auto hit = cache_->lookup(request)) return *hit;
    if (!provider_->supports(request.source, request.target))
      throw InputError("provider " + provider_->id() + " does not support " + std::string(to_string(request.source)) +
                       " -> " + std::string(to_string(request.target)));
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      try {
        gate_.acquire();
        std::string out;
        try {
          provider_calls_.fetch_add(1);
          out = provider_->translate(request.text, request.source, request.target);
        } catch (...) {
          gate_.release();
          throw;
        }
        gate_.release();
        cache_->store(request, out, provider_->id());
        return out;
      } catch (const ProviderError& e) {
        if (!e.transient() || attempt >= retry_.max_attempts)
          throw ProviderError("translation failed after " + std::to_string(attempt) + " attempt(s): " + e.what(),
                              false);
        sleep_(e.retry_after().value_or(backoff));
        backoff = std::min(retry_.max_backoff,
                           std::chrono::milliseconds(static_cast<long long>(backoff.count() * retry_.multiplier)));
      }
    }
  }

  std::size_t provider_calls() const { return provider_calls_.load(); }
  const TranslationProvider& provider() const { return *provider_; }
  TranslationCache& cache() { return *cache_; }

 private:
  std::shared_ptr<TranslationProvider> provider_;
  std::shared_ptr<TranslationCache> cache_;
  RetryPolicy retry_;
  InFlightGate gate_;
  Sleeper sleep_;
  std::atomic<std::size_t> provider_calls_{0};
};

inline std::string translate(const TranslationRequest& request, TranslationService& service) {
  return service.translate(request);
}

/// Per-item result of translate_batch: exactly one of text / error is meaningful.
struct TranslationOutcome {
  std::optional<std::string> text;
  std::string error;

  bool ok() const { return text.has_value(); }
};

/// Translates every request with at most max_in_flight requests outstanding.
/// Output index i always corresponds to request i; failures are per item.
/// Identical requests are sent once and fanned out.
inline std::vector<TranslationOutcome> translate_batch(const std::vector<TranslationRequest>& requests,
                                                       TranslationService& service, std::size_t max_in_flight) {
  if (max_in_flight < 1) throw InputError("max_in_flight must be at least 1");
  std::vector<std::size_t> unique;              // request index of each distinct request
  std::vector<std::size_t> slot(requests.size());  // request -> position in `unique`
  std::unordered_map<std::string, std::vector<std::size_t>> by_key;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    auto& bucket = by_key[cache_key(requests[i])];
    auto same = std::find_if(bucket.begin(), bucket.end(),
                             [&](std::size_t u) { return requests[unique[u]] == requests[i]; });
    if (same != bucket.end()) {
      slot[i] = *same;
    } else {
      slot[i] = unique.size();
      bucket.push_back(unique.size());
      unique.push_back(i);
    }
  }

  std::vector<TranslationOutcome> results(unique.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t u; (u = next.fetch_add(1)) < unique.size();) {
      try {
        results[u].text = service.translate(requests[unique[u]]);
      } catch (const std::exception& e) {
        results[u].error = e.what();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const std::size_t n_workers = std::min(max_in_flight, unique.size());
    pool.reserve(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  }
  std::vector<TranslationOutcome> out(requests.size());
  for (std::size_t i = 0; i < requests.size(); ++i) out[i] = results[slot[i]];
  return out;
}

}  // namespace aggro
