// Standalone stub chat-completions server for manual runs.
#include <csignal>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "conviction/respondent.hpp"
#include "conviction/stub_server.hpp"

namespace {
volatile std::sig_atomic_t g_stop = 0;
}

int main(int argc, char** argv) {
  CLI::App app{"Stub chat-completions server"};
  conviction::StubOptions options;
  app.add_option("--port", options.port, "Port to listen on (0 = any)");
  app.add_option("--rate-limit-every", options.rate_limit_every,
                 "Answer every k-th chat request with 429");
  app.add_option("--fail-first", options.fail_first,
                 "Answer the first m chat requests with 503");
  CLI11_PARSE(app, argc, argv);
  options.api_key = conviction::api_key_from_env();

  std::signal(SIGINT, [](int) { g_stop = 1; });
  std::signal(SIGTERM, [](int) { g_stop = 1; });
  conviction::StubServer server(options);
  std::cout << server.base_url() << std::endl;
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  std::cerr << server.chat_requests() << " chat requests, " << server.rejected()
            << " rejected\n";
  return 0;
}
