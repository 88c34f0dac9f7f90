#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sempred/core.hpp"

namespace sempred {

// Injectable time source so rate-limit behavior is testable on a virtual
// clock.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::uint64_t now_ms() = 0;
  virtual void sleep_ms(std::uint64_t ms) = 0;
};

std::shared_ptr<Clock> system_clock();

struct RateLimitPolicy {
  std::uint64_t tokens_per_minute = 150000;
  int max_concurrent = 8;
  int max_attempts = 4;
  std::uint64_t backoff_base_ms = 250;

  void validate() const;
};

// Sliding-minute token budget: acquire() blocks (via the clock) until issuing
// `tokens` keeps the trailing 60 s total within budget.
class RateLimiter {
 public:
  RateLimiter(std::uint64_t tokens_per_minute, std::shared_ptr<Clock> clock);
  void acquire(std::uint64_t tokens);

 private:
  std::uint64_t budget_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::deque<std::pair<std::uint64_t, std::uint64_t>> issued_;  // (time_ms, tokens)
  std::uint64_t in_window_ = 0;
};

// Oracle contract: boolean predicate labels, memoized per (query, doc) so a
// pair is never paid for twice within a run.
class Oracle {
 public:
  virtual ~Oracle() = default;

  struct BatchLabelResult {
    std::vector<std::uint8_t> labels;  // parallel to the requested ids
    std::vector<std::uint8_t> ok;
    std::string first_error;
    bool all_ok = true;
  };

  bool label(const std::string& query, const std::string& doc_id);
  // Labels in doc_id order; duplicates and memo hits cost nothing. Throws on
  // any failure.
  std::vector<std::uint8_t> label_batch(const std::string& query, std::span<const std::string> doc_ids);
  // Non-throwing variant preserving partial results.
  BatchLabelResult try_label_batch(const std::string& query, std::span<const std::string> doc_ids);

  // Underlying lookups actually performed (== distinct pairs requested).
  std::size_t invocation_count() const;

 protected:
  virtual bool label_uncached(const std::string& query, const std::string& doc_id) = 0;
  // Batch hook for implementations with their own concurrency; per-id errors
  // are reported through `errors` (empty string = success).
  virtual void label_uncached_batch(const std::string& query, const std::vector<std::string>& doc_ids,
                                    std::vector<std::uint8_t>& out, std::vector<std::string>& errors);

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::string, bool> memo_;
  std::size_t invocations_ = 0;
};

// Ground-truth stand-in backed by a label file; no network traffic.
class MockOracle : public Oracle {
 public:
  explicit MockOracle(LabelSet labels) : labels_(std::move(labels)) {}

 protected:
  bool label_uncached(const std::string& query, const std::string& doc_id) override;

 private:
  LabelSet labels_;
};

struct LlmEndpointConfig {
  std::string base_url;  // e.g. http://localhost:8080
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "SEMPRED_API_KEY";
  std::string model = "gpt-4o";
  std::string system_prompt =
      "You evaluate whether a document satisfies a boolean predicate. Answer strictly YES or NO.";
  std::string prompt_template = "Query: {query}\nDocument: {document}\nAnswer YES or NO.";
  RateLimitPolicy rate;
};

using DocTextProvider = std::function<std::string(const std::string& doc_id)>;

// Chat-completion client: renders the prompt template, posts JSON, parses the
// first token of the reply as YES/NO, retries transient failures with
// exponential backoff, and respects the token budget and concurrency bound.
class HttpLlmOracle : public Oracle {
 public:
  HttpLlmOracle(LlmEndpointConfig config, DocTextProvider doc_text, std::shared_ptr<Clock> clock = nullptr);

 protected:
  bool label_uncached(const std::string& query, const std::string& doc_id) override;
  void label_uncached_batch(const std::string& query, const std::vector<std::string>& doc_ids,
                            std::vector<std::uint8_t>& out, std::vector<std::string>& errors) override;

 private:
  bool request_once(const std::string& query, const std::string& doc_text, std::string& error);

  LlmEndpointConfig config_;
  DocTextProvider doc_text_;
  std::shared_ptr<Clock> clock_;
  RateLimiter limiter_;
};

// Parses an oracle reply: first non-whitespace token, trailing punctuation
// stripped, case-insensitive YES/NO. Returns false on anything else and sets
// `value`.
bool parse_yes_no(const std::string& reply, bool& value);

// chars/4 token estimate used for rate limiting.
std::uint64_t estimate_tokens(const std::string& text);

std::string render_prompt(const std::string& tmpl, const std::string& query, const std::string& document);

}  // namespace sempred
