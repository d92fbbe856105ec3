#pragma once

#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "deepred/image.hpp"
#include "deepred/tensor.hpp"

namespace deepred {

struct DenoiserError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Run an external denoiser: the image is written to the command's stdin as
/// a portable float map (PF/Pf, little-endian, top-down rows) and the
/// denoised image is read back from its stdout in the same format.
/// Nonzero exit or exceeding the timeout raises DenoiserError.
inline Tensor external_denoise(const Tensor& x, const std::string& command,
                               double timeout_seconds = 60.0) {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0)
        throw DenoiserError("external denoiser: pipe() failed");

    pid_t pid = fork();
    if (pid < 0) throw DenoiserError("external denoiser: fork() failed");
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);

    // feed stdin from a helper thread so a streaming child cannot deadlock
    std::thread writer([&x, fd = in_pipe[1]]() {
        signal(SIGPIPE, SIG_IGN);
        std::FILE* f = fdopen(fd, "wb");
        if (f) {
            try {
                write_pfm(x, f);
            } catch (...) {
            }
            std::fclose(f);
        } else {
            close(fd);
        }
    });

    std::vector<char> out;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
    bool timed_out = false;
    char buf[1 << 16];
    for (;;) {
        auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
                        deadline - std::chrono::steady_clock::now())
                        .count();
        if (left <= 0) {
            timed_out = true;
            break;
        }
        struct pollfd pfd {out_pipe[0], POLLIN, 0};
        int pr = poll(&pfd, 1, static_cast<int>(left));
        if (pr < 0) break;
        if (pr == 0) {
            timed_out = true;
            break;
        }
        ssize_t n = read(out_pipe[0], buf, sizeof(buf));
        if (n <= 0) break;
        out.insert(out.end(), buf, buf + n);
    }
    close(out_pipe[0]);
    if (timed_out) kill(pid, SIGKILL);
    writer.join();

    int status = 0;
    waitpid(pid, &status, 0);
    if (timed_out) throw DenoiserError("external denoiser: timed out after " +
                                       std::to_string(timeout_seconds) + "s");
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0)
        throw DenoiserError("external denoiser: command failed with status " +
                            std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : -1));

    std::FILE* f = fmemopen(out.data(), out.size(), "rb");
    if (!f) throw DenoiserError("external denoiser: cannot parse output");
    Tensor result;
    try {
        result = read_pfm(f);
    } catch (const std::exception& e) {
        std::fclose(f);
        throw DenoiserError(std::string("external denoiser: bad output: ") + e.what());
    }
    std::fclose(f);
    if (result.shape() != x.shape())
        throw DenoiserError("external denoiser: output shape " + shape_str(result.shape()) +
                            " does not match input " + shape_str(x.shape()));
    result.clamp(0.0, 1.0);
    return result;
}

}  // namespace deepred
